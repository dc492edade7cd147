#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bfseg/error.hpp"

namespace bfseg {

template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major tensor. Activations use (batch, channels, height, width).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, const std::vector<T>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != count(shape_)) {
      throw Error(ErrorCode::ShapeMismatch, "tensor value count does not match shape");
    }
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // NCHW helpers; valid for rank-4 tensors only.
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }
  std::size_t plane() const { return static_cast<std::size_t>(h()) * static_cast<std::size_t>(w()); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int b, int ch, int y, int x) { return data_[offset(b, ch, y, x)]; }
  const T& at(int b, int ch, int y, int x) const { return data_[offset(b, ch, y, x)]; }

  /// Pointer to the (b, ch) spatial plane.
  T* plane_ptr(int b, int ch) { return data_.data() + offset(b, ch, 0, 0); }
  const T* plane_ptr(int b, int ch) const { return data_.data() + offset(b, ch, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t total = 1;
    for (int e : shape) {
      if (e < 0) throw Error(ErrorCode::ShapeMismatch, "negative tensor extent");
      total *= static_cast<std::size_t>(e);
    }
    return total;
  }

 private:
  std::size_t offset(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x;
  }

  std::vector<int> shape_;
  // Fixed alignment keeps vectorized reductions independent of where the
  // buffer happens to land, so results are bitwise reproducible.
  AlignedVector<T> data_;
};

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw Error(ErrorCode::NonFinite, std::string(what) + " contains NaN or Inf");
}

}  // namespace bfseg
