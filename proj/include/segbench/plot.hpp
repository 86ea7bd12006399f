#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "segbench/grid.hpp"

// Minimal raster plotting for report figures: bar charts with error bars and
// image strips, drawn with a built-in 5x7 bitmap font.
namespace segbench::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);  // inclusive-exclusive
  void hline(int x0, int x1, int y, Rgb c);
  void vline(int x, int y0, int y1, Rgb c);
  /// Upper-case text; unknown glyphs render as blanks. Returns the advance in pixels.
  int text(int x, int y, std::string_view s, Rgb c, int scale = 1);
  static int text_width(std::string_view s, int scale = 1);
  /// Grayscale image scaled by an integer factor; values are clamped to [lo, hi].
  void blit_gray(int x, int y, const Image& img, int scale, float lo, float hi);
  void write_png(const std::filesystem::path& path) const;

  int width() const { return width_; }
  int height() const { return height_; }

 private:
  void set(int x, int y, Rgb c);
  int width_, height_;
  std::vector<std::uint8_t> rgb_;
};

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per series; NaN leaves a gap
  std::vector<double> errors;  // same length, drawn as +-error whiskers
};

struct BarChart {
  std::string title;
  std::vector<std::string> series;
  std::vector<BarGroup> groups;
  bool zero_baseline = true;  // otherwise the axis is fitted to the data range
};

Rgb series_color(std::size_t i);
void write_bar_chart(const std::filesystem::path& path, const BarChart& chart, int width = 720, int height = 400);

}  // namespace segbench::plot
