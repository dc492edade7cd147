#pragma once

// Slow, obviously-correct reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "bfseg/grid.hpp"
#include "bfseg/tensor.hpp"

namespace oracle {

using bfseg::Grid;
using bfseg::Mask;
using bfseg::Tensor;

inline Mask random_mask(int h, int w, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(density);
  Mask m(h, w, 0);
  for (auto& v : m.storage()) v = coin(rng) ? 1 : 0;
  return m;
}

/// Random blobs: a union of rectangles, closer to building masks than noise.
inline Mask random_blob_mask(int h, int w, std::mt19937_64& rng) {
  Mask m(h, w, 0);
  std::uniform_int_distribution<int> count(0, 6), py(0, h - 1), px(0, w - 1), side(1, std::max(2, h / 3));
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const int y0 = py(rng), x0 = px(rng), bh = side(rng), bw = side(rng);
    for (int y = y0; y < std::min(h, y0 + bh); ++y)
      for (int x = x0; x < std::min(w, x0 + bw); ++x) m(y, x) = 1;
  }
  return m;
}

/// Pixels of value 1 touching a 0 (or the raster edge) through a 4-neighbour.
inline Mask boundary(const Mask& m) {
  Mask q(m.height(), m.width(), 0);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(y, x)) continue;
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || nx < 0 || ny >= m.height() || nx >= m.width() || !m(ny, nx)) q(y, x) = 1;
      }
    }
  }
  return q;
}

/// Exhaustive squared distance to the nearest seed; -1 when there is none.
inline Grid<std::int64_t> squared_distance(const Mask& seeds) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < seeds.height(); ++y)
    for (int x = 0; x < seeds.width(); ++x)
      if (seeds(y, x)) pts.emplace_back(y, x);
  Grid<std::int64_t> d(seeds.height(), seeds.width(), -1);
  for (int y = 0; y < seeds.height(); ++y) {
    for (int x = 0; x < seeds.width(); ++x) {
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (auto [sy, sx] : pts) {
        const std::int64_t dy = y - sy, dx = x - sx;
        best = std::min(best, dy * dy + dx * dx);
      }
      if (!pts.empty()) d(y, x) = best;
    }
  }
  return d;
}

inline Grid<double> signed_distance(const Mask& m, double radius) {
  const Grid<std::int64_t> sq = squared_distance(boundary(m));
  Grid<double> out(m.height(), m.width(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = sq[i] < 0 ? radius : std::min(radius, std::sqrt(static_cast<double>(sq[i])));
    out[i] = m[i] ? d : -d;
  }
  return out;
}

/// Direct 2-D convolution (cross-correlation), zero padding k/2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const int n = in.n(), cin = in.c(), h = in.h(), wd = in.w(), cout = w.dim(0), k = w.dim(2), pad = k / 2;
  Tensor<T> out({n, cout, h, wd});
  for (int bi = 0; bi < n; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
          T acc = b[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y + ky - pad, sx = x + kx - pad;
                if (sy < 0 || sx < 0 || sy >= h || sx >= wd) continue;
                acc += w.at(co, ci, ky, kx) * in.at(bi, ci, sy, sx);
              }
          out.at(bi, co, y, x) = acc;
        }
  return out;
}

inline double nll(const std::vector<double>& logits, int target) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return -(logits[static_cast<std::size_t>(target)] - mx - std::log(s));
}

}  // namespace oracle
