#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace segbench {

/// Row-major 2-D array. Used for raw images (float) and binary masks (uint8).
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("grid dimensions must be positive");
    values.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
  }

  T& operator()(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  const T& operator()(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const { return height == o.height && width == o.width; }

  bool operator==(const Grid&) const = default;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline bool is_binary(const Mask& m) {
  for (auto v : m.values)
    if (v > 1) return false;
  return true;
}

inline std::size_t count_foreground(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.values) n += (v != 0);
  return n;
}

}  // namespace segbench
