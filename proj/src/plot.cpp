#include "segbench/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "segbench/image_io.hpp"

namespace segbench::plot {
namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs = {
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1e}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
  };
  return glyphs;
}

constexpr Rgb kInk{40, 40, 40};
constexpr Rgb kGrid{220, 220, 220};

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Axis range and tick step with 1/2/5 multiples.
void nice_axis(double lo, double hi, double& axis_lo, double& axis_hi, double& step) {
  if (!(hi > lo)) hi = lo + 1.0;
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  step = (norm <= 1.0 ? 1.0 : norm <= 2.0 ? 2.0 : norm <= 5.0 ? 5.0 : 10.0) * mag;
  axis_lo = std::floor(lo / step) * step;
  axis_hi = std::ceil(hi / step) * step;
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("canvas dimensions must be positive");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) {
    rgb_[i] = background.r;
    rgb_[i + 1] = background.g;
    rgb_[i + 2] = background.b;
  }
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  rgb_[i] = c.r;
  rgb_[i + 1] = c.g;
  rgb_[i + 2] = c.b;
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) set(x, y, c);
}

void Canvas::hline(int x0, int x1, int y, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  for (int x = x0; x <= x1; ++x) set(x, y, c);
}

void Canvas::vline(int x, int y0, int y1, Rgb c) {
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) set(x, y, c);
}

int Canvas::text_width(std::string_view s, int scale) { return static_cast<int>(s.size()) * 6 * scale; }

int Canvas::text(int x, int y, std::string_view s, Rgb c, int scale) {
  int cx = x;
  for (char ch : s) {
    const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (it != font().end()) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[static_cast<std::size_t>(row)] & (1 << (4 - col)))
            fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale, y + (row + 1) * scale, c);
    }
    cx += 6 * scale;
  }
  return cx - x;
}

void Canvas::blit_gray(int x, int y, const Image& img, int scale, float lo, float hi) {
  for (int r = 0; r < img.height; ++r)
    for (int col = 0; col < img.width; ++col) {
      const float t = std::clamp((img(r, col) - lo) / (hi - lo), 0.0f, 1.0f);
      const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0f));
      fill_rect(x + col * scale, y + r * scale, x + (col + 1) * scale, y + (r + 1) * scale, {v, v, v});
    }
}

void Canvas::write_png(const std::filesystem::path& path) const { io::write_png_rgb(path, width_, height_, rgb_); }

Rgb series_color(std::size_t i) {
  static constexpr std::array<Rgb, 8> palette = {{{31, 119, 180},
                                                  {255, 127, 14},
                                                  {44, 160, 44},
                                                  {214, 39, 40},
                                                  {148, 103, 189},
                                                  {140, 86, 75},
                                                  {227, 119, 194},
                                                  {127, 127, 127}}};
  return palette[i % palette.size()];
}

void write_bar_chart(const std::filesystem::path& path, const BarChart& chart, int width, int height) {
  if (chart.groups.empty() || chart.series.empty()) throw std::invalid_argument("bar chart needs groups and series");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& g : chart.groups) {
    if (g.values.size() != chart.series.size() || g.errors.size() != chart.series.size())
      throw std::invalid_argument("bar group '" + g.label + "' does not match the series count");
    for (std::size_t s = 0; s < g.values.size(); ++s) {
      if (!std::isfinite(g.values[s])) continue;
      const double e = std::isfinite(g.errors[s]) ? std::abs(g.errors[s]) : 0.0;
      lo = std::min(lo, g.values[s] - e);
      hi = std::max(hi, g.values[s] + e);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (chart.zero_baseline) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
  }
  double axis_lo, axis_hi, step;
  nice_axis(lo, hi, axis_lo, axis_hi, step);

  Canvas cv(width, height);
  const int left = 60, right = width - 20, top = 40;
  const int legend_h = 14 * static_cast<int>((chart.series.size() + 3) / 4);
  const int bottom = height - 30 - legend_h;
  cv.text(left, 12, chart.title, kInk, 2);
  auto ypix = [&](double v) {
    return bottom - static_cast<int>(std::lround((v - axis_lo) / (axis_hi - axis_lo) * (bottom - top)));
  };
  for (double t = axis_lo; t <= axis_hi + 1e-9 * step; t += step) {
    const int y = ypix(t);
    cv.hline(left, right, y, kGrid);
    const auto label = format_tick(std::abs(t) < 1e-12 ? 0.0 : t);
    cv.text(left - 6 - Canvas::text_width(label), y - 3, label, kInk);
  }
  cv.vline(left, top, bottom, kInk);
  cv.hline(left, right, ypix(std::clamp(0.0, axis_lo, axis_hi)), kInk);

  const int group_w = (right - left) / static_cast<int>(chart.groups.size());
  const int bar_w = std::max(2, (group_w * 3 / 4) / static_cast<int>(chart.series.size()));
  const int zero_y = ypix(std::clamp(0.0, axis_lo, axis_hi));
  for (std::size_t gi = 0; gi < chart.groups.size(); ++gi) {
    const auto& g = chart.groups[gi];
    const int gx = left + static_cast<int>(gi) * group_w + group_w / 8;
    for (std::size_t s = 0; s < g.values.size(); ++s) {
      if (!std::isfinite(g.values[s])) continue;
      const int x0 = gx + static_cast<int>(s) * bar_w;
      cv.fill_rect(x0 + 1, ypix(g.values[s]), x0 + bar_w - 1, zero_y, series_color(s));
      if (std::isfinite(g.errors[s]) && g.errors[s] > 0.0) {
        const int xm = x0 + bar_w / 2;
        const int y_hi = ypix(g.values[s] + g.errors[s]);
        const int y_lo = ypix(g.values[s] - g.errors[s]);
        cv.vline(xm, y_hi, y_lo, kInk);
        cv.hline(xm - bar_w / 4, xm + bar_w / 4, y_hi, kInk);
        cv.hline(xm - bar_w / 4, xm + bar_w / 4, y_lo, kInk);
      }
    }
    const int tw = Canvas::text_width(g.label);
    cv.text(left + static_cast<int>(gi) * group_w + (group_w - tw) / 2, bottom + 6, g.label, kInk);
  }
  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const int col = static_cast<int>(s % 4), row = static_cast<int>(s / 4);
    const int x = left + col * ((right - left) / 4);
    const int y = bottom + 22 + row * 14;
    cv.fill_rect(x, y, x + 10, y + 8, series_color(s));
    cv.text(x + 14, y, chart.series[s], kInk);
  }
  cv.write_png(path);
}

}  // namespace segbench::plot
