#pragma once

#include "segbench/grid.hpp"

// Histogram equalisation -> gamma correction -> bilinear resize -> [-1,1].
namespace segbench::prep {

struct PreprocessConfig {
  int resolution = 64;  // square output; >= 16 and a power of two
  double gamma = 0.5;
  bool equalize = true;

  void validate() const;  // throws ConfigError
};

inline constexpr int kHistogramBins = 256;

/// Maps each 256-bin histogram bin to the midpoint of its step in the
/// empirical CDF. Images whose pixels all fall into one bin are returned unchanged.
Image equalize_histogram(const Image& img);

/// Pixelwise img^gamma. Throws std::invalid_argument on negative pixels or gamma <= 0.
Image gamma_correct(const Image& img, double gamma);

Image resize_bilinear(const Image& img, int height, int width);
Mask resize_nearest(const Mask& m, int height, int width);

/// Resizes to resolution x resolution and maps [0,1] -> [-1,1].
Image resize_normalize(const Image& img, const PreprocessConfig& cfg);

/// Full pipeline in fixed order; output lies in [-1,1].
Image preprocess_image(const Image& raw, const PreprocessConfig& cfg);
Mask preprocess_mask(const Mask& m, const PreprocessConfig& cfg);

}  // namespace segbench::prep
