#pragma once

// Differentiable building blocks for the encoder-decoder: same-size 2D
// convolution (im2col + GEMM), 2x2 max pooling with recorded argmax indices,
// index unpooling, ReLU, channel softmax and channel concatenation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bfseg/error.hpp"
#include "bfseg/tensor.hpp"

namespace bfseg {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Argmax positions of a 2x2 pooling: one flat offset (y * W + x) into the
/// pre-pool plane for every pooled element, plus the pre-pool shape.
struct PoolIndices {
  std::vector<int> input_shape;
  std::vector<std::int32_t> offsets;
};

namespace detail {

inline void require_rank4(const std::vector<int>& shape, const char* what) {
  if (shape.size() != 4) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be rank 4");
}

// cols has shape (C*k*k, H*W); zero padding of (k-1)/2.
template <typename T>
void im2col(const T* image, int channels, int height, int width, int ksize, T* cols) {
  const int pad = (ksize - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * ksize * ksize + ky * ksize + kx) * hw;
        const int dx = kx - pad;
        const int x_begin = std::max(0, -dx);
        const int x_end = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          T* out = row + static_cast<std::size_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(out, out + width, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * width;
          std::fill(out, out + x_begin, T{0});
          std::copy(src + x_begin + dx, src + x_end + dx, out + x_begin);
          std::fill(out + x_end, out + width, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int channels, int height, int width, int ksize, T* image) {
  const int pad = (ksize - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * ksize * ksize + ky * ksize + kx) * hw;
        const int dx = kx - pad;
        const int x_begin = std::max(0, -dx);
        const int x_end = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          const T* src = row + static_cast<std::size_t>(y) * width;
          T* dst = plane + static_cast<std::size_t>(sy) * width;
          for (int x = x_begin; x < x_end; ++x) dst[x + dx] += src[x];
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank4(input.shape(), "conv input");
  require_rank4(weight.shape(), "conv weight");
  if (weight.dim(1) != input.c()) {
    throw Error(ErrorCode::ShapeMismatch, "conv weight expects " + std::to_string(weight.dim(1)) +
                                              " input channels, got " + std::to_string(input.c()));
  }
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw Error(ErrorCode::ShapeMismatch, "conv kernel must be square with odd size");
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "conv bias must have one entry per output channel");
  }
}

}  // namespace detail

/// Same-size cross-correlation with zero padding (k-1)/2 and per-channel bias.
/// weight: (Cout, Cin, k, k), bias: (Cout).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::check_conv_shapes(input, weight, bias);
  const int n = input.n(), cin = input.c(), h = input.h(), w = input.w();
  const int cout = weight.dim(0), k = weight.dim(2);
  const int hw = h * w;
  const int kdim = cin * k * k;
  Tensor<T> out({n, cout, h, w});
  AlignedVector<T> cols(static_cast<std::size_t>(kdim) * hw);
  ConstMatrixMap<T> wmat(weight.data(), cout, kdim);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), cout);
  for (int b = 0; b < n; ++b) {
    detail::im2col(input.plane_ptr(b, 0), cin, h, w, k, cols.data());
    ConstMatrixMap<T> cmat(cols.data(), kdim, hw);
    MatrixMap<T> omat(out.plane_ptr(b, 0), cout, hw);
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
  }
  return out;
}

/// Accumulates weight/bias gradients into grad_weight/grad_bias. When
/// grad_input is non-null it is overwritten with dL/dinput.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_output,
                     Tensor<T>* grad_input, Tensor<T>& grad_weight, Tensor<T>& grad_bias) {
  const int n = input.n(), cin = input.c(), h = input.h(), w = input.w();
  const int cout = weight.dim(0), k = weight.dim(2);
  const int hw = h * w;
  const int kdim = cin * k * k;
  if (grad_output.shape() != std::vector<int>{n, cout, h, w}) {
    throw Error(ErrorCode::ShapeMismatch, "conv grad_output shape " + shape_string(grad_output.shape()));
  }
  AlignedVector<T> cols(static_cast<std::size_t>(kdim) * hw);
  ConstMatrixMap<T> wmat(weight.data(), cout, kdim);
  MatrixMap<T> gw(grad_weight.data(), cout, kdim);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_bias.data(), cout);
  if (grad_input) *grad_input = Tensor<T>(input.shape());
  for (int b = 0; b < n; ++b) {
    ConstMatrixMap<T> go(grad_output.plane_ptr(b, 0), cout, hw);
    detail::im2col(input.plane_ptr(b, 0), cin, h, w, k, cols.data());
    ConstMatrixMap<T> cmat(cols.data(), kdim, hw);
    gw.noalias() += go * cmat.transpose();
    gb += go.rowwise().sum();
    if (grad_input) {
      MatrixMap<T> gcols(cols.data(), kdim, hw);
      gcols.noalias() = wmat.transpose() * go;
      detail::col2im_add(cols.data(), cin, h, w, k, grad_input->plane_ptr(b, 0));
    }
  }
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  PoolIndices indices;
};

/// 2x2 stride-2 max pooling. Ties go to the first position in row-major
/// window order.
template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor<T>& input) {
  detail::require_rank4(input.shape(), "pool input");
  const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
  if (h % 2 != 0 || w % 2 != 0) throw Error(ErrorCode::OddExtent, "2x2 pooling needs even extents");
  const int oh = h / 2, ow = w / 2;
  PoolResult<T> r{Tensor<T>({n, c, oh, ow}), PoolIndices{input.shape(), {}}};
  r.indices.offsets.resize(r.output.size());
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = input.plane_ptr(b, ch);
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++o) {
          int best = (2 * y) * w + 2 * x;
          const int cand[3] = {best + 1, best + w, best + w + 1};
          for (int off : cand) {
            if (src[off] > src[best]) best = off;
          }
          r.output[o] = src[best];
          r.indices.offsets[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_output, const PoolIndices& indices) {
  Tensor<T> grad_input(indices.input_shape);
  const std::size_t in_plane = static_cast<std::size_t>(indices.input_shape[2]) * indices.input_shape[3];
  const std::size_t out_plane = grad_output.plane();
  for (std::size_t o = 0; o < grad_output.size(); ++o) {
    const std::size_t p = o / out_plane;
    grad_input[p * in_plane + static_cast<std::size_t>(indices.offsets[o])] += grad_output[o];
  }
  return grad_input;
}

/// Scatters each value to its recorded argmax position; every other output
/// position is zero.
template <typename T>
Tensor<T> maxunpool2x2(const Tensor<T>& input, const PoolIndices& indices) {
  detail::require_rank4(input.shape(), "unpool input");
  const auto& target = indices.input_shape;
  if (target.size() != 4 || target[0] != input.n() || target[1] != input.c() || target[2] != 2 * input.h() ||
      target[3] != 2 * input.w() || indices.offsets.size() != input.size()) {
    throw Error(ErrorCode::ShapeMismatch, "unpool indices do not match input " + shape_string(input.shape()));
  }
  Tensor<T> out(target);
  const int w = target[3];
  const int ow = input.w();
  const std::size_t in_plane = static_cast<std::size_t>(target[2]) * w;
  const std::size_t out_plane = input.plane();
  for (std::size_t o = 0; o < input.size(); ++o) {
    const std::size_t p = o / out_plane;
    const int pooled = static_cast<int>(o % out_plane);
    const int py = pooled / ow, px = pooled % ow;
    const int off = indices.offsets[o];
    const int y = off / w, x = off % w;
    if (y / 2 != py || x / 2 != px || y < 0 || x < 0) {
      throw Error(ErrorCode::IndexOutOfWindow, "pool index outside its 2x2 window");
    }
    out[p * in_plane + static_cast<std::size_t>(off)] = input[o];
  }
  return out;
}

/// Gradient of maxunpool2x2: gathers from the recorded positions.
template <typename T>
Tensor<T> maxunpool2x2_backward(const Tensor<T>& grad_output, const PoolIndices& indices) {
  const auto& s = indices.input_shape;
  Tensor<T> grad_input({s[0], s[1], s[2] / 2, s[3] / 2});
  const std::size_t in_plane = static_cast<std::size_t>(s[2]) * s[3];
  const std::size_t out_plane = grad_input.plane();
  for (std::size_t o = 0; o < grad_input.size(); ++o) {
    const std::size_t p = o / out_plane;
    grad_input[o] = grad_output[p * in_plane + static_cast<std::size_t>(indices.offsets[o])];
  }
  return grad_input;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// dL/dx of relu given its output (positive exactly where the input was).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_output) {
  Tensor<T> g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(output[i] > T{0})) g[i] = T{0};
  }
  return g;
}

/// Softmax over the channel axis at every (batch, pixel).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  detail::require_rank4(logits.shape(), "softmax input");
  Tensor<T> out(logits.shape());
  const int n = logits.n(), c = logits.c();
  const std::size_t hw = logits.plane();
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, logits.plane_ptr(b, ch)[i]);
      T sum{0};
      for (int ch = 0; ch < c; ++ch) {
        const T e = std::exp(logits.plane_ptr(b, ch)[i] - mx);
        out.plane_ptr(b, ch)[i] = e;
        sum += e;
      }
      for (int ch = 0; ch < c; ++ch) out.plane_ptr(b, ch)[i] /= sum;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank4(a.shape(), "concat input");
  detail::require_rank4(b.shape(), "concat input");
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw Error(ErrorCode::ShapeMismatch,
                "concat extents differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor<T> out({a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t hw = a.plane();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.plane_ptr(n, 0), a.c() * hw, out.plane_ptr(n, 0));
    std::copy_n(b.plane_ptr(n, 0), b.c() * hw, out.plane_ptr(n, a.c()));
  }
  return out;
}

/// Splits a concat gradient back into its two parts; first has `first_channels`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int first_channels) {
  const int second = g.c() - first_channels;
  Tensor<T> a({g.n(), first_channels, g.h(), g.w()});
  Tensor<T> b({g.n(), second, g.h(), g.w()});
  const std::size_t hw = g.plane();
  for (int n = 0; n < g.n(); ++n) {
    std::copy_n(g.plane_ptr(n, 0), first_channels * hw, a.plane_ptr(n, 0));
    std::copy_n(g.plane_ptr(n, first_channels), second * hw, b.plane_ptr(n, 0));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace bfseg
