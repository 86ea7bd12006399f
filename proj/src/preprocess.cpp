#include "segbench/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "segbench/errors.hpp"

namespace segbench::prep {

void PreprocessConfig::validate() const {
  if (resolution < 16 || (resolution & (resolution - 1)) != 0)
    throw ConfigError("preprocess.resolution must be a power of two >= 16, got " + std::to_string(resolution));
  if (!(gamma > 0.0)) throw ConfigError("preprocess.gamma must be > 0");
}

namespace {
int bin_of(float v) {
  const int b = static_cast<int>(std::floor(static_cast<double>(v) * kHistogramBins));
  return std::clamp(b, 0, kHistogramBins - 1);
}
}  // namespace

Image equalize_histogram(const Image& img) {
  std::array<std::size_t, kHistogramBins> hist{};
  for (float v : img.values) ++hist[static_cast<std::size_t>(bin_of(v))];
  const auto occupied = std::count_if(hist.begin(), hist.end(), [](std::size_t n) { return n > 0; });
  if (occupied <= 1) return img;

  const double n = static_cast<double>(img.size());
  std::array<float, kHistogramBins> lut{};
  std::size_t below = 0;
  for (int b = 0; b < kHistogramBins; ++b) {
    lut[static_cast<std::size_t>(b)] = static_cast<float>((static_cast<double>(below) + 0.5 * hist[b]) / n);
    below += hist[static_cast<std::size_t>(b)];
  }
  Image out = img;
  for (auto& v : out.values) v = lut[static_cast<std::size_t>(bin_of(v))];
  return out;
}

Image gamma_correct(const Image& img, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  Image out = img;
  for (auto& v : out.values) {
    if (v < 0.0f) throw std::invalid_argument("gamma_correct: negative pixel value");
    v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
  }
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (int r = 0; r < height; ++r) {
    const double y = std::max(0.0, (r + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(y), img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (int c = 0; c < width; ++c) {
      const double x = std::max(0.0, (c + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(x), img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      const double top = img(y0, x0) * (1.0 - fx) + img(y0, x1) * fx;
      const double bot = img(y1, x0) * (1.0 - fx) + img(y1, x1) * fx;
      out(r, c) = static_cast<float>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

Mask resize_nearest(const Mask& m, int height, int width) {
  if (m.height == height && m.width == width) return m;
  Mask out(height, width);
  for (int r = 0; r < height; ++r) {
    const int sr = std::min(static_cast<int>((r + 0.5) * m.height / height), m.height - 1);
    for (int c = 0; c < width; ++c) {
      const int sc = std::min(static_cast<int>((c + 0.5) * m.width / width), m.width - 1);
      out(r, c) = m(sr, sc);
    }
  }
  return out;
}

Image resize_normalize(const Image& img, const PreprocessConfig& cfg) {
  Image out = resize_bilinear(img, cfg.resolution, cfg.resolution);
  for (auto& v : out.values) v = std::clamp(2.0f * v - 1.0f, -1.0f, 1.0f);
  return out;
}

Image preprocess_image(const Image& raw, const PreprocessConfig& cfg) {
  Image x = cfg.equalize ? equalize_histogram(raw) : raw;
  x = gamma_correct(x, cfg.gamma);
  return resize_normalize(x, cfg);
}

Mask preprocess_mask(const Mask& m, const PreprocessConfig& cfg) {
  return resize_nearest(m, cfg.resolution, cfg.resolution);
}

}  // namespace segbench::prep
