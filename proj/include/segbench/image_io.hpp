#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "segbench/grid.hpp"

namespace segbench::io {

// 8-bit grayscale PNG. Throws DataError on unreadable or non-8-bit files.
Grid<std::uint8_t> read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);

// Interleaved 8-bit RGB, rgb.size() == 3 * width * height.
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

Grid<std::uint8_t> to_bytes(const Image& img);  // clamps to [0,1], rounds to 0..255
Image from_bytes(const Grid<std::uint8_t>& bytes);

Grid<std::uint8_t> mask_to_bytes(const Mask& m);  // {0,1} -> {0,255}
Mask mask_from_bytes(const Grid<std::uint8_t>& bytes);  // throws DataError unless {0,255}

}  // namespace segbench::io
