#pragma once

// Signed truncated distance labels for building masks: boundary extraction,
// exact Euclidean distance transform, uniform distance-class quantization and
// decoding of (predicted) distance classes back into masks.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "bfseg/error.hpp"
#include "bfseg/grid.hpp"

namespace bfseg {

struct SignedDistanceMap {
  Grid<double> values;
  double radius = 0.0;
};

/// K uniform bins over [-R, +R]. edges[K/2] is exactly zero.
class BinSpec {
 public:
  BinSpec(int bins, double radius) : bins_(bins), radius_(radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw Error(ErrorCode::InvalidThreshold, "truncation radius must be positive");
    }
    if (bins < 2 || bins % 2 != 0 || bins > 256) {
      throw Error(ErrorCode::BadBinSpec, "bin count must be a positive even integer <= 256");
    }
    edges_.resize(static_cast<std::size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k) {
      edges_[k] = radius * static_cast<double>(2 * k - bins) / static_cast<double>(bins);
    }
    edges_.front() = -radius;
    edges_.back() = radius;
    representatives_.resize(static_cast<std::size_t>(bins));
    for (int k = 0; k < bins; ++k) representatives_[k] = 0.5 * (edges_[k] + edges_[k + 1]);
  }

  int bins() const noexcept { return bins_; }
  double radius() const noexcept { return radius_; }
  double width() const noexcept { return 2.0 * radius_ / bins_; }
  const std::vector<double>& edges() const noexcept { return edges_; }
  const std::vector<double>& representatives() const noexcept { return representatives_; }
  int default_threshold_bin() const noexcept { return bins_ / 2; }

  /// Bin k with edges[k] <= v < edges[k+1]; v == +R lands in the last bin.
  int bin_of(double v) const {
    if (!(v >= -radius_ && v <= radius_)) {
      throw Error(ErrorCode::ThresholdMismatch, "distance value outside [-R, R]");
    }
    auto it = std::upper_bound(edges_.begin(), edges_.end(), v);
    int k = static_cast<int>(it - edges_.begin()) - 1;
    return std::clamp(k, 0, bins_ - 1);
  }

 private:
  int bins_;
  double radius_;
  std::vector<double> edges_;
  std::vector<double> representatives_;
};

struct DistanceClassMap {
  Grid<std::uint8_t> bins;
  BinSpec spec;
};

/// Building pixels with a 4-connected background neighbour; pixels outside
/// the raster count as background.
inline Mask boundary_pixels(const Mask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  Mask out(h, w, 0);
  auto bg = [&](int y, int x) {
    return y < 0 || x < 0 || y >= h || x >= w || mask(y, x) == 0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) == 0) continue;
      if (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)) out(y, x) = 1;
    }
  }
  return out;
}

namespace detail {

inline constexpr std::int64_t kUnreached = std::numeric_limits<std::int64_t>::max();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over the finite
// samples of f. Intersections are compared as exact rationals so the result
// is exact for integer input.
inline void edt_1d(const std::int64_t* f, std::int64_t* d, int n, std::vector<int>& v,
                   std::vector<std::int64_t>& znum, std::vector<std::int64_t>& zden) {
  v.resize(static_cast<std::size_t>(n));
  znum.resize(static_cast<std::size_t>(n) + 1);
  zden.resize(static_cast<std::size_t>(n) + 1);
  int k = -1;
  // z[k] = znum[k] / zden[k] with zden > 0; z[0] is -inf and never stored.
  for (int q = 0; q < n; ++q) {
    if (f[q] == kUnreached) continue;
    const std::int64_t fq = f[q] + static_cast<std::int64_t>(q) * q;
    while (k >= 0) {
      const int p = v[k];
      const std::int64_t num = fq - (f[p] + static_cast<std::int64_t>(p) * p);
      const std::int64_t den = 2 * static_cast<std::int64_t>(q - p);
      // s <= z[k]  <=>  num / den <= znum[k] / zden[k]
      if (k > 0 && num * zden[k] <= znum[k] * den) {
        --k;
        continue;
      }
      break;
    }
    if (k < 0) {
      v[0] = q;
      k = 0;
      continue;
    }
    const int p = v[k];
    ++k;
    v[k] = q;
    znum[k] = fq - (f[p] + static_cast<std::int64_t>(p) * p);
    zden[k] = 2 * static_cast<std::int64_t>(q - p);
  }
  if (k < 0) {
    std::fill(d, d + n, kUnreached);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    // advance while q > z[j+1]
    while (j < k && static_cast<std::int64_t>(q) * zden[j + 1] > znum[j + 1]) ++j;
    const std::int64_t dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance to the nearest seed pixel.
/// With allow_empty, an empty seed set yields kUnreached everywhere instead of throwing.
inline Grid<std::int64_t> squared_edt(const Mask& seeds, bool allow_empty = false) {
  const int h = seeds.height();
  const int w = seeds.width();
  const bool any = std::any_of(seeds.values().begin(), seeds.values().end(),
                               [](std::uint8_t s) { return s != 0; });
  if (!any) {
    if (!allow_empty) throw Error(ErrorCode::EmptySeeds, "no seed pixel set");
    return Grid<std::int64_t>(h, w, detail::kUnreached);
  }

  Grid<std::int64_t> out(h, w);
  std::vector<int> v;
  std::vector<std::int64_t> znum, zden;
  std::vector<std::int64_t> f(static_cast<std::size_t>(std::max(h, w)));
  std::vector<std::int64_t> d(f.size());

  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = seeds(y, x) ? 0 : detail::kUnreached;
    detail::edt_1d(f.data(), d.data(), h, v, znum, zden);
    for (int y = 0; y < h; ++y) out(y, x) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = out(y, x);
    detail::edt_1d(f.data(), d.data(), w, v, znum, zden);
    for (int x = 0; x < w; ++x) out(y, x) = d[x];
  }
  return out;
}

/// D(p) = sign(p) * min(dist(p, boundary), R); +1 inside buildings, -1 outside.
/// A mask without buildings has no boundary and maps to -R everywhere.
inline SignedDistanceMap signed_truncated_distance(const Mask& mask, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw Error(ErrorCode::InvalidThreshold, "truncation radius must be positive");
  }
  const Mask boundary = boundary_pixels(mask);
  const Grid<std::int64_t> sq = squared_edt(boundary, /*allow_empty=*/true);
  SignedDistanceMap out{Grid<double>(mask.height(), mask.width()), radius};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double dist = sq[i] == detail::kUnreached
                            ? radius
                            : std::min(std::sqrt(static_cast<double>(sq[i])), radius);
    out.values[i] = mask[i] ? dist : -dist;
  }
  return out;
}

inline DistanceClassMap quantize(const SignedDistanceMap& sdm, const BinSpec& spec) {
  if (sdm.radius != spec.radius()) {
    throw Error(ErrorCode::ThresholdMismatch, "distance map radius differs from bin spec radius");
  }
  DistanceClassMap out{Grid<std::uint8_t>(sdm.values.height(), sdm.values.width()), spec};
  for (std::size_t i = 0; i < sdm.values.size(); ++i) {
    out.bins[i] = static_cast<std::uint8_t>(spec.bin_of(sdm.values[i]));
  }
  return out;
}

/// K-channel one-hot raster, channel-major: channel k occupies [k*H*W, (k+1)*H*W).
inline std::vector<std::uint8_t> encode_one_hot(const DistanceClassMap& dcm) {
  const std::size_t plane = dcm.bins.size();
  std::vector<std::uint8_t> out(plane * static_cast<std::size_t>(dcm.spec.bins()), 0);
  for (std::size_t i = 0; i < plane; ++i) {
    const int k = dcm.bins[i];
    if (k >= dcm.spec.bins()) throw Error(ErrorCode::BadClassIndex, "bin index out of range");
    out[static_cast<std::size_t>(k) * plane + i] = 1;
  }
  return out;
}

/// Sum over k of r_k * b_k(p) for a one-hot raster produced by encode_one_hot.
inline Grid<double> reconstruct_distance(const std::vector<std::uint8_t>& one_hot, const BinSpec& spec,
                                         int height, int width) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (one_hot.size() != plane * spec.bins()) {
    throw Error(ErrorCode::ShapeMismatch, "one-hot raster size mismatch");
  }
  Grid<double> out(height, width, 0.0);
  for (int k = 0; k < spec.bins(); ++k)
    for (std::size_t i = 0; i < plane; ++i)
      out[i] += spec.representatives()[k] * one_hot[static_cast<std::size_t>(k) * plane + i];
  return out;
}

/// Building iff bin index >= threshold_bin.
inline Mask decode_mask(const Grid<std::uint8_t>& bins, int num_bins, int threshold_bin) {
  if (threshold_bin < 0 || threshold_bin > num_bins - 1) {
    throw Error(ErrorCode::BadThreshold, "threshold bin outside [0, K-1]");
  }
  Mask out(bins.height(), bins.width(), 0);
  for (std::size_t i = 0; i < bins.size(); ++i) out[i] = bins[i] >= threshold_bin ? 1 : 0;
  return out;
}

inline Mask decode_mask(const DistanceClassMap& dcm, int threshold_bin) {
  return decode_mask(dcm.bins, dcm.spec.bins(), threshold_bin);
}

inline Mask decode_mask(const DistanceClassMap& dcm) {
  return decode_mask(dcm, dcm.spec.default_threshold_bin());
}

inline std::vector<std::size_t> bin_histogram(const DistanceClassMap& dcm) {
  std::vector<std::size_t> hist(static_cast<std::size_t>(dcm.spec.bins()), 0);
  for (auto b : dcm.bins.values()) ++hist[b];
  return hist;
}

// SDT1 raster: "SDT1", u32 height, u32 width, f32 R, then f32 values row-major,
// all little-endian.
namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T> && (sizeof(T) == 4 || sizeof(T) == 1));
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::BadFormat, "unexpected end of stream");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline void write_sdt(std::ostream& os, const SignedDistanceMap& sdm) {
  os.write("SDT1", 4);
  detail::put_le(os, static_cast<std::uint32_t>(sdm.values.height()));
  detail::put_le(os, static_cast<std::uint32_t>(sdm.values.width()));
  detail::put_le(os, static_cast<float>(sdm.radius));
  for (double v : sdm.values.values()) detail::put_le(os, static_cast<float>(v));
  if (!os) throw Error(ErrorCode::IoError, "failed writing SDT1 raster");
}

inline SignedDistanceMap read_sdt(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SDT1", 4) != 0) {
    throw Error(ErrorCode::BadFormat, "missing SDT1 magic");
  }
  const auto h = detail::get_le<std::uint32_t>(is);
  const auto w = detail::get_le<std::uint32_t>(is);
  const auto r = detail::get_le<float>(is);
  if (h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16)) {
    throw Error(ErrorCode::BadFormat, "implausible SDT1 extents");
  }
  SignedDistanceMap out{Grid<double>(static_cast<int>(h), static_cast<int>(w)), static_cast<double>(r)};
  for (auto& v : out.values.storage()) v = detail::get_le<float>(is);
  return out;
}

inline void save_sdt(const std::string& path, const SignedDistanceMap& sdm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path);
  write_sdt(os, sdm);
}

inline SignedDistanceMap load_sdt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_sdt(is);
}

}  // namespace bfseg
