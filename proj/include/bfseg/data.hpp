#pragma once

// Scenes on disk (images/<location><index>.png, gt/<location><index>.png),
// dataset splits and the synthetic building-scene generator.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "bfseg/error.hpp"
#include "bfseg/grid.hpp"
#include "bfseg/png_io.hpp"
#include "bfseg/tensor.hpp"

namespace bfseg {

struct Scene {
  std::string id;  // "<location><index>"
  std::string location;
  int index = 0;
  RgbImage image;
  Mask mask;
};

struct SceneName {
  std::string location;
  int index = 0;
};

/// "austin7" or "austin7.png" -> {"austin", 7}. The location is the non-digit
/// prefix, the index the trailing decimal digits.
inline SceneName parse_scene_name(std::string name) {
  if (const auto dot = name.rfind('.'); dot != std::string::npos) name.resize(dot);
  if (const auto slash = name.find_last_of("/\\"); slash != std::string::npos) name = name.substr(slash + 1);
  std::size_t split = name.size();
  while (split > 0 && std::isdigit(static_cast<unsigned char>(name[split - 1]))) --split;
  if (split == 0 || split == name.size() || name.size() - split > 9) {
    throw Error(ErrorCode::UnparseableName, "cannot parse location/index from '" + name + "'");
  }
  return {name.substr(0, split), std::stoi(name.substr(split))};
}

inline Scene load_scene(const std::string& image_path, const std::string& mask_path) {
  const SceneName parsed = parse_scene_name(image_path);
  Scene s;
  s.location = parsed.location;
  s.index = parsed.index;
  s.id = s.location + std::to_string(s.index);
  s.image = read_rgb_png(image_path);
  s.mask = read_mask_png(mask_path);
  if (s.image.height != s.mask.height() || s.image.width != s.mask.width()) {
    throw Error(ErrorCode::ExtentMismatch, "image and mask extents differ for " + s.id);
  }
  return s;
}

inline void save_scene(const std::filesystem::path& root, const Scene& s) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "gt");
  write_rgb_png((root / "images" / (s.id + ".png")).string(), s.image);
  write_mask_png((root / "gt" / (s.id + ".png")).string(), s.mask);
}

/// Loads every images/*.png with a matching gt/*.png, ordered by (location, index).
inline std::vector<Scene> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "gt")) {
    throw Error(ErrorCode::IoError, "dataset root " + root.string() + " lacks images/ and gt/");
  }
  std::vector<Scene> scenes;
  for (const auto& entry : fs::directory_iterator(root / "images")) {
    if (entry.path().extension() != ".png") continue;
    const fs::path gt = root / "gt" / entry.path().filename();
    if (!fs::exists(gt)) throw Error(ErrorCode::IoError, "missing ground truth " + gt.string());
    scenes.push_back(load_scene(entry.path().string(), gt.string()));
  }
  std::sort(scenes.begin(), scenes.end(), [](const Scene& a, const Scene& b) {
    return std::tie(a.location, a.index) < std::tie(b.location, b.index);
  });
  return scenes;
}

struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> validation;
  std::string rule;
};

struct SplitRule {
  enum class Kind { PaperIndex, Ratio } kind = Kind::PaperIndex;
  int validation_max_index = 5;     // PaperIndex: indices 1..N per location validate
  double validation_fraction = 0.2;  // Ratio
  std::uint64_t seed = 0;            // Ratio shuffle

  static SplitRule paper() { return {}; }
  static SplitRule ratio(double fraction, std::uint64_t seed) { return {Kind::Ratio, 5, fraction, seed}; }

  std::string describe() const {
    if (kind == Kind::PaperIndex) return "index 1-" + std::to_string(validation_max_index) + " per location validate";
    return "seeded shuffle, validation fraction " + std::to_string(validation_fraction) + ", seed " +
           std::to_string(seed);
  }
};

inline DatasetSplit split_dataset(std::vector<Scene> scenes, const SplitRule& rule) {
  std::set<std::string> ids;
  for (const auto& s : scenes) {
    if (!ids.insert(s.id).second) throw Error(ErrorCode::DuplicateId, "duplicate scene id " + s.id);
  }
  DatasetSplit out;
  out.rule = rule.describe();
  if (rule.kind == SplitRule::Kind::PaperIndex) {
    for (auto& s : scenes) {
      const bool val = s.index >= 1 && s.index <= rule.validation_max_index;
      (val ? out.validation : out.train).push_back(std::move(s));
    }
    return out;
  }
  if (!(rule.validation_fraction >= 0.0 && rule.validation_fraction <= 1.0)) {
    throw Error(ErrorCode::BadParams, "validation fraction outside [0, 1]");
  }
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(rule.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(rule.validation_fraction * static_cast<double>(scenes.size())));
  std::vector<bool> is_val(scenes.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < scenes.size(); ++i) (is_val[i] ? out.validation : out.train).push_back(std::move(scenes[i]));
  return out;
}

/// Normalized network input (1, 3, H, W) for a scene image.
template <typename T>
void image_to_tensor(const RgbImage& img, Tensor<T>& out, int batch_index, int y0 = 0, int x0 = 0, int h = -1,
                     int w = -1, bool flip_h = false, bool flip_v = false) {
  if (h < 0) h = img.height;
  if (w < 0) w = img.width;
  for (int c = 0; c < 3; ++c) {
    T* plane = out.plane_ptr(batch_index, c);
    for (int y = 0; y < h; ++y) {
      const int sy = y0 + (flip_v ? h - 1 - y : y);
      for (int x = 0; x < w; ++x) {
        const int sx = x0 + (flip_h ? w - 1 - x : x);
        plane[static_cast<std::size_t>(y) * w + x] = static_cast<T>((img.at(sy, sx, c) / 255.0 - 0.5) / 0.25);
      }
    }
  }
}

struct SynthParams {
  int extent = 128;
  int min_buildings = 1;
  int max_buildings = 12;
  int min_side = 8;
  int max_side = 32;
  double max_rotation_deg = 30.0;  // 0 = axis-aligned only
  double rotated_fraction = 0.5;
  double density_min = 0.05;  // building-pixel fraction band
  double density_max = 0.45;
  double noise = 12.0;        // per-pixel colour noise amplitude (8-bit units)
  std::vector<std::string> locations{"austin", "chicago", "kitsap", "tyrolw", "vienna"};

  void validate(int divisor = 1) const {
    if (extent < 8 || extent % divisor != 0) throw Error(ErrorCode::BadParams, "extent must be >= 8 and divisible by 2^stages");
    if (min_buildings < 0 || max_buildings < min_buildings) throw Error(ErrorCode::BadParams, "building count range");
    if (min_side < 2 || max_side < min_side || max_side > extent) throw Error(ErrorCode::BadParams, "building side range");
    if (!(density_min >= 0.0 && density_max <= 1.0 && density_min <= density_max)) {
      throw Error(ErrorCode::BadParams, "density band");
    }
    if (locations.empty()) throw Error(ErrorCode::BadParams, "need at least one location");
    for (const auto& l : locations) {
      if (l.empty() || std::any_of(l.begin(), l.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
        throw Error(ErrorCode::BadParams, "location names must be non-empty and digit-free");
      }
    }
    if (noise < 0.0) throw Error(ErrorCode::BadParams, "noise must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const SynthParams& p) {
  j = nlohmann::json{{"extent", p.extent},           {"min_buildings", p.min_buildings},
                     {"max_buildings", p.max_buildings}, {"min_side", p.min_side},
                     {"max_side", p.max_side},       {"max_rotation_deg", p.max_rotation_deg},
                     {"rotated_fraction", p.rotated_fraction}, {"density_min", p.density_min},
                     {"density_max", p.density_max}, {"noise", p.noise},
                     {"locations", p.locations}};
}

namespace detail {

struct Rect {
  double cx, cy, half_w, half_h, angle;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return std::abs(u) <= half_w && std::abs(v) <= half_h;
  }
};

// Smooth field in [0, 1]: bilinear upsampling of a coarse random lattice.
inline Grid<double> low_frequency_field(int extent, int cells, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid<double> lattice(cells + 1, cells + 1);
  for (auto& v : lattice.storage()) v = u(rng);
  Grid<double> out(extent, extent);
  const double scale = static_cast<double>(cells) / extent;
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      const double fy = (y + 0.5) * scale, fx = (x + 0.5) * scale;
      const int iy = std::min(static_cast<int>(fy), cells - 1), ix = std::min(static_cast<int>(fx), cells - 1);
      const double ty = fy - iy, tx = fx - ix;
      out(y, x) = (1 - ty) * ((1 - tx) * lattice(iy, ix) + tx * lattice(iy, ix + 1)) +
                  ty * ((1 - tx) * lattice(iy + 1, ix) + tx * lattice(iy + 1, ix + 1));
    }
  }
  return out;
}

inline std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

/// One synthetic scene: vegetation/soil background texture with rectangular
/// (optionally rotated) roofs. A pixel is building iff its centre lies inside
/// a rectangle.
inline Scene generate_scene(const SynthParams& params, std::mt19937_64& rng, const std::string& location, int index) {
  const int n = params.extent;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Scene s;
  s.location = location;
  s.index = index;
  s.id = location + std::to_string(index);
  s.mask = Mask(n, n, 0);
  s.image = RgbImage(n, n);

  // Background: blend of vegetation green and soil brown driven by a smooth field.
  const Grid<double> field = detail::low_frequency_field(n, 4, rng);
  const Grid<double> detail_field = detail::low_frequency_field(n, 16, rng);
  const double veg[3] = {70 + 20 * u(rng), 105 + 25 * u(rng), 55 + 15 * u(rng)};
  const double soil[3] = {140 + 25 * u(rng), 125 + 20 * u(rng), 95 + 20 * u(rng)};

  // Roofs.
  std::vector<detail::Rect> roofs;
  std::vector<std::array<double, 3>> roof_colour;
  std::uniform_int_distribution<int> count_dist(params.min_buildings, params.max_buildings);
  const int target_count = count_dist(rng);
  const double target_density = params.density_min + (params.density_max - params.density_min) * u(rng);
  const double max_angle = params.max_rotation_deg * std::numbers::pi / 180.0;
  std::size_t building_pixels = 0;
  const double total = static_cast<double>(n) * n;
  int placed = 0;
  // Stop at the drawn count once the band floor is met; otherwise keep going up to max_buildings.
  for (int attempt = 0; attempt < 40 * std::max(1, params.max_buildings) && placed < params.max_buildings; ++attempt) {
    const double current = building_pixels / total;
    if (placed >= params.min_buildings && current >= target_density) break;
    if (placed >= target_count && current >= params.density_min) break;
    std::uniform_int_distribution<int> side(params.min_side, params.max_side);
    detail::Rect r{};
    r.half_w = side(rng) / 2.0;
    r.half_h = side(rng) / 2.0;
    r.cx = u(rng) * n;
    r.cy = u(rng) * n;
    r.angle = (max_angle > 0.0 && u(rng) < params.rotated_fraction) ? (2.0 * u(rng) - 1.0) * max_angle : 0.0;

    // Rasterize into a scratch mask; reject overlaps (with a 2 px gap) and density overshoot.
    const double reach = std::hypot(r.half_w, r.half_h) + 1;
    const int y0 = std::max(0, static_cast<int>(r.cy - reach)), y1 = std::min(n - 1, static_cast<int>(r.cy + reach));
    const int x0 = std::max(0, static_cast<int>(r.cx - reach)), x1 = std::min(n - 1, static_cast<int>(r.cx + reach));
    std::vector<std::pair<int, int>> cells;
    bool clash = false;
    for (int y = y0; y <= y1 && !clash; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!r.contains(x + 0.5, y + 0.5)) continue;
        for (int dy = -2; dy <= 2 && !clash; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && xx >= 0 && yy < n && xx < n && s.mask(yy, xx)) {
              clash = true;
              break;
            }
          }
        if (clash) break;
        cells.emplace_back(y, x);
      }
    }
    if (clash || cells.empty()) continue;
    if ((building_pixels + cells.size()) / total > params.density_max) continue;
    for (auto [y, x] : cells) s.mask(y, x) = 1;
    building_pixels += cells.size();
    roofs.push_back(r);
    const double tone = u(rng);
    if (tone < 0.4) {  // grey concrete
      const double g = 150 + 70 * u(rng);
      roof_colour.push_back({g, g, g + 8 * u(rng)});
    } else if (tone < 0.75) {  // terracotta
      roof_colour.push_back({170 + 40 * u(rng), 70 + 30 * u(rng), 55 + 20 * u(rng)});
    } else {  // dark slate
      const double g = 60 + 30 * u(rng);
      roof_colour.push_back({g, g + 5, g + 15 * u(rng)});
    }
    ++placed;
  }

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double rgb[3];
      int roof = -1;
      if (s.mask(y, x)) {
        for (std::size_t k = 0; k < roofs.size(); ++k)
          if (roofs[k].contains(x + 0.5, y + 0.5)) {
            roof = static_cast<int>(k);
            break;
          }
      }
      if (roof >= 0) {
        const double shade = 0.9 + 0.2 * detail_field(y, x);
        for (int c = 0; c < 3; ++c) rgb[c] = roof_colour[roof][c] * shade;
      } else {
        const double t = field(y, x);
        const double d = 0.85 + 0.3 * detail_field(y, x);
        for (int c = 0; c < 3; ++c) rgb[c] = ((1 - t) * veg[c] + t * soil[c]) * d;
      }
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = detail::clamp_byte(rgb[c] + params.noise * gauss(rng));
    }
  }
  return s;
}

/// `count` scenes assigned round-robin to params.locations; per-location
/// indices start at 1.
inline std::vector<Scene> generate_synthetic(int count, const SynthParams& params, std::uint64_t seed, int divisor = 1) {
  if (count < 0) throw Error(ErrorCode::BadParams, "scene count must be non-negative");
  params.validate(divisor);
  std::mt19937_64 rng(seed);
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(count));
  std::map<std::string, int> next_index;
  for (int i = 0; i < count; ++i) {
    const std::string& loc = params.locations[static_cast<std::size_t>(i) % params.locations.size()];
    out.push_back(generate_scene(params, rng, loc, ++next_index[loc]));
  }
  return out;
}

inline void write_synthetic_dataset(const std::filesystem::path& root, const std::vector<Scene>& scenes,
                                    const SynthParams& params, std::uint64_t seed) {
  for (const auto& s : scenes) save_scene(root, s);
  nlohmann::json manifest{{"generator", "synthetic-rectangles"},
                          {"seed", seed},
                          {"count", scenes.size()},
                          {"params", params}};
  std::ofstream os(root / "manifest.json");
  if (!os) throw Error(ErrorCode::IoError, "cannot write manifest in " + root.string());
  os << manifest.dump(2) << '\n';
}

}  // namespace bfseg
