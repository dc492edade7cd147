#pragma once

// 8-bit PNG read/write through libpng's simplified API.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "bfseg/error.hpp"
#include "bfseg/grid.hpp"

namespace bfseg {

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

namespace detail {

inline std::vector<std::uint8_t> read_png(const std::string& path, std::uint32_t format, int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(ErrorCode::DecodeError, path + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, path + ": " + image.message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

inline void write_png(const std::string& path, std::uint32_t format, int height, int width, const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorCode::IoError, path + ": " + image.message);
  }
}

}  // namespace detail

inline Grid<std::uint8_t> read_gray_png(const std::string& path) {
  int h = 0, w = 0;
  auto buf = detail::read_png(path, PNG_FORMAT_GRAY, h, w);
  return Grid<std::uint8_t>(h, w, std::move(buf));
}

inline RgbImage read_rgb_png(const std::string& path) {
  RgbImage img;
  img.pixels = detail::read_png(path, PNG_FORMAT_RGB, img.height, img.width);
  return img;
}

inline void write_gray_png(const std::string& path, const Grid<std::uint8_t>& g) {
  detail::write_png(path, PNG_FORMAT_GRAY, g.height(), g.width(), g.storage().data());
}

inline void write_rgb_png(const std::string& path, const RgbImage& img) {
  detail::write_png(path, PNG_FORMAT_RGB, img.height, img.width, img.pixels.data());
}

/// Mask stored as 0/255.
inline void write_mask_png(const std::string& path, const Mask& mask) {
  Grid<std::uint8_t> g(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 255 : 0;
  write_gray_png(path, g);
}

/// Thresholds at 128.
inline Mask read_mask_png(const std::string& path) {
  Grid<std::uint8_t> g = read_gray_png(path);
  for (auto& v : g.storage()) v = v >= 128 ? 1 : 0;
  return g;
}

}  // namespace bfseg
