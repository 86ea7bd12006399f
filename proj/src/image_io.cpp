#include "segbench/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "segbench/errors.hpp"

namespace segbench::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               int channels, const std::uint8_t* data) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(data + r * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Grid<std::uint8_t> read_png_gray(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image: " + path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("expected 8-bit grayscale PNG: " + path.string());
  }

  Grid<std::uint8_t> out(height, width);
  for (int r = 0; r < height; ++r) png_read_row(png, &out.values[static_cast<std::size_t>(r) * width], nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels) {
  write_png(path, pixels.width, pixels.height, PNG_COLOR_TYPE_GRAY, 1, pixels.values.data());
}

void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("rgb buffer size does not match dimensions");
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, rgb.data());
}

Grid<std::uint8_t> to_bytes(const Image& img) {
  Grid<std::uint8_t> out(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img.values[i], 0.0f, 1.0f);
    out.values[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Image from_bytes(const Grid<std::uint8_t>& bytes) {
  Image out(bytes.height, bytes.width);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = static_cast<float>(bytes.values[i]) / 255.0f;
  return out;
}

Grid<std::uint8_t> mask_to_bytes(const Mask& m) {
  Grid<std::uint8_t> out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.values[i] = m.values[i] ? 255 : 0;
  return out;
}

Mask mask_from_bytes(const Grid<std::uint8_t>& bytes) {
  Mask out(bytes.height, bytes.width);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const auto v = bytes.values[i];
    if (v != 0 && v != 255) throw DataError("mask pixel value " + std::to_string(v) + " is not 0 or 255");
    out.values[i] = v ? 1 : 0;
  }
  return out;
}

}  // namespace segbench::io
