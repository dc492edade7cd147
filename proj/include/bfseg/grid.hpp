#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bfseg/error.hpp"

namespace bfseg {

/// Dense row-major H x W raster.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(checked_size(height, width), fill) {}
  Grid(int height, int width, std::vector<T> values)
      : height_(height), width_(width), data_(std::move(values)) {
    if (data_.size() != checked_size(height, width)) {
      throw Error(ErrorCode::ShapeMismatch, "grid value count does not match extents");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x) { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid<T>& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }
  template <typename U>
  bool same_extent(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static std::size_t checked_size(int height, int width) {
    if (height < 1 || width < 1) {
      throw Error(ErrorCode::ShapeMismatch, "grid extents must be positive");
    }
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Binary raster: 1 = building, 0 = background.
using Mask = Grid<std::uint8_t>;

inline void require_binary(const Mask& mask) {
  if (std::any_of(mask.values().begin(), mask.values().end(), [](std::uint8_t v) { return v > 1; })) {
    throw Error(ErrorCode::BadParams, "mask values must be 0 or 1");
  }
}

template <typename T>
Grid<T> flip_horizontal(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(y, x) = g(y, g.width() - 1 - x);
  return out;
}

template <typename T>
Grid<T> flip_vertical(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(y, x) = g(g.height() - 1 - y, x);
  return out;
}

template <typename T>
Grid<T> crop(const Grid<T>& g, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > g.height() || x0 + w > g.width()) {
    throw Error(ErrorCode::ShapeMismatch, "crop window outside raster");
  }
  Grid<T> out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = g(y0 + y, x0 + x);
  return out;
}

}  // namespace bfseg
