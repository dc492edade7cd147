#pragma once

// Building-class IoU and two-class pixel accuracy, full-scene tiled inference
// and per-location / overall reporting.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bfseg/data.hpp"
#include "bfseg/distxform.hpp"
#include "bfseg/error.hpp"
#include "bfseg/grid.hpp"
#include "bfseg/network.hpp"

namespace bfseg {

struct IouCounts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  double ratio = 1.0;  // both-empty convention
};

inline void require_same_extent(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth extents differ");
}

inline IouCounts iou_building(const Mask& pred, const Mask& gt) {
  require_same_extent(pred, gt);
  IouCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.intersection += p && g;
    c.union_ += p || g;
  }
  c.ratio = c.union_ == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_);
  return c;
}

inline std::uint64_t correct_pixels(const Mask& pred, const Mask& gt) {
  require_same_extent(pred, gt);
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += (pred[i] != 0) == (gt[i] != 0);
  return n;
}

inline double pixel_accuracy(const Mask& pred, const Mask& gt) {
  return static_cast<double>(correct_pixels(pred, gt)) / static_cast<double>(pred.size());
}

struct MetricCounts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  std::uint64_t correct = 0;
  std::uint64_t pixels = 0;

  double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
  double accuracy() const { return pixels == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(pixels); }

  MetricCounts& operator+=(const MetricCounts& o) {
    intersection += o.intersection;
    union_ += o.union_;
    correct += o.correct;
    pixels += o.pixels;
    return *this;
  }
};

inline MetricCounts score(const Mask& pred, const Mask& gt) {
  const IouCounts iou = iou_building(pred, gt);
  return {iou.intersection, iou.union_, correct_pixels(pred, gt), pred.size()};
}

/// Per-location counts; the overall entry is derived from summed counts,
/// never from averaged ratios.
class MetricsReport {
 public:
  void add(const std::string& location, const MetricCounts& counts) { per_location_[location] += counts; }

  const std::map<std::string, MetricCounts>& per_location() const noexcept { return per_location_; }

  MetricCounts overall() const {
    MetricCounts total;
    for (const auto& [_, c] : per_location_) total += c;
    return total;
  }

  nlohmann::json to_json() const {
    auto entry = [](const MetricCounts& c) {
      return nlohmann::json{{"iou", round4(c.iou())},
                            {"accuracy", round4(c.accuracy())},
                            {"intersection", c.intersection},
                            {"union", c.union_},
                            {"correct", c.correct},
                            {"pixels", c.pixels}};
    };
    nlohmann::json j;
    j["per_location"] = nlohmann::json::object();
    for (const auto& [loc, c] : per_location_) j["per_location"][loc] = entry(c);
    j["overall"] = entry(overall());
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    for (const auto& [loc, e] : j.at("per_location").items()) {
      r.add(loc, MetricCounts{e.at("intersection").get<std::uint64_t>(), e.at("union").get<std::uint64_t>(),
                              e.at("correct").get<std::uint64_t>(), e.at("pixels").get<std::uint64_t>()});
    }
    return r;
  }

  /// location,iou,accuracy,intersection,union,correct,pixels; Overall last.
  void write_csv(std::ostream& os) const {
    os << "location,iou,accuracy,intersection,union,correct,pixels\n";
    auto row = [&](const std::string& name, const MetricCounts& c) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f,%.4f", c.iou(), c.accuracy());
      os << name << ',' << buf << ',' << c.intersection << ',' << c.union_ << ',' << c.correct << ',' << c.pixels
         << '\n';
    };
    for (const auto& [loc, c] : per_location_) row(loc, c);
    row("Overall", overall());
  }

  static double round4(double v) { return std::round(v * 1e4) / 1e4; }

 private:
  std::map<std::string, MetricCounts> per_location_;
};

/// Window origins along one axis: stride = patch, final window aligned to the border.
inline std::vector<int> tile_origins(int extent, int patch) {
  if (extent < patch) throw Error(ErrorCode::SceneTooSmall, "scene smaller than inference window");
  std::vector<int> origins;
  for (int o = 0; o + patch <= extent; o += patch) origins.push_back(o);
  if (origins.back() + patch < extent) origins.push_back(extent - patch);
  return origins;
}

enum class DecodeRule { SegArgmax, DistThreshold };

inline std::string_view to_string(DecodeRule r) { return r == DecodeRule::SegArgmax ? "seg_argmax" : "dist_threshold"; }

struct ScenePrediction {
  Mask seg;   // argmax of the segmentation head
  Mask dist;  // distance head decoded at the threshold bin
  Grid<std::uint8_t> dist_bins;

  const Mask& select(DecodeRule rule) const { return rule == DecodeRule::SegArgmax ? seg : dist; }
};

/// Tiles the scene with patch-sized windows, runs the network on each and
/// stitches both heads. Pixels covered by an earlier window keep that window's
/// prediction, so every pixel is predicted exactly once.
template <typename T>
ScenePrediction predict_scene(const Network<T>& net, const RgbImage& image, int patch, int threshold_bin) {
  const int h = image.height, w = image.width;
  const int k = net.config().num_distance_classes;
  ScenePrediction out{Mask(h, w, 0), Mask(h, w, 0), Grid<std::uint8_t>(h, w, 0)};
  Grid<std::uint8_t> written(h, w, 0);
  for (int y0 : tile_origins(h, patch)) {
    for (int x0 : tile_origins(w, patch)) {
      Tensor<T> input({1, 3, patch, patch});
      image_to_tensor(image, input, 0, y0, x0, patch, patch);
      const ForwardOutputs<T> fwd = net.forward(input, /*keep_cache=*/false);
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          if (written(y0 + y, x0 + x)) continue;
          written(y0 + y, x0 + x) = 1;
          const T s0 = fwd.seg_logits.at(0, 0, y, x), s1 = fwd.seg_logits.at(0, 1, y, x);
          out.seg(y0 + y, x0 + x) = s1 > s0 ? 1 : 0;
          int best = 0;
          for (int c = 1; c < k; ++c)
            if (fwd.dist_logits.at(0, c, y, x) > fwd.dist_logits.at(0, best, y, x)) best = c;
          out.dist_bins(y0 + y, x0 + x) = static_cast<std::uint8_t>(best);
        }
      }
    }
  }
  out.dist = decode_mask(out.dist_bins, k, threshold_bin);
  return out;
}

template <typename T>
MetricsReport evaluate_model(const Network<T>& net, const std::vector<Scene>& validation, DecodeRule rule, int patch,
                             int threshold_bin) {
  if (validation.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");
  MetricsReport report;
  for (const auto& scene : validation) {
    const ScenePrediction pred = predict_scene(net, scene.image, patch, threshold_bin);
    report.add(scene.location, score(pred.select(rule), scene.mask));
  }
  return report;
}

/// Scores precomputed predictions (id -> mask) against scene ground truth.
inline MetricsReport evaluate_predictions(const std::vector<Scene>& scenes, const std::map<std::string, Mask>& preds) {
  if (scenes.empty()) throw Error(ErrorCode::EmptySplit, "no scenes to evaluate");
  MetricsReport report;
  for (const auto& s : scenes) {
    auto it = preds.find(s.id);
    if (it == preds.end()) throw Error(ErrorCode::IoError, "no prediction for scene " + s.id);
    report.add(s.location, score(it->second, s.mask));
  }
  return report;
}

}  // namespace bfseg
