#pragma once

// Flat "key = value" experiment configuration. Keys mirror the fields of
// TrainConfig, NetworkConfig and the label/data settings; '#' starts a comment.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bfseg/data.hpp"
#include "bfseg/error.hpp"
#include "bfseg/loss.hpp"
#include "bfseg/network.hpp"
#include "bfseg/trainer.hpp"

namespace bfseg {

struct ExperimentConfig {
  NetworkConfig net;
  TrainConfig train;
  LabelConfig labels;
  int threshold_bin = -1;  // -1: K/2
  std::string data_root;
  std::string split = "ratio";  // "ratio" or "paper"
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;

  int resolved_threshold_bin() const { return threshold_bin < 0 ? labels.bins / 2 : threshold_bin; }

  SplitRule split_rule() const {
    if (split == "paper") return SplitRule::paper();
    return SplitRule::ratio(val_fraction, split_seed);
  }

  void validate() const {
    net.validate();
    train.validate(net);
    if (net.num_distance_classes != labels.bins) {
      throw Error(ErrorCode::BadConfig, "network distance classes must equal the bin count");
    }
    BinSpec(labels.bins, labels.radius);
    const int t = resolved_threshold_bin();
    if (t < 0 || t >= labels.bins) throw Error(ErrorCode::BadThreshold, "threshold_bin outside [0, K-1]");
    if (split != "ratio" && split != "paper") throw Error(ErrorCode::BadConfig, "split must be 'ratio' or 'paper'");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  if constexpr (std::is_floating_point_v<N>) {
    try {
      std::size_t used = 0;
      out = static_cast<N>(std::stod(value, &used));
      if (used != value.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadConfig, "key '" + key + "': not a number: '" + value + "'");
    }
  } else {
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
      throw Error(ErrorCode::BadConfig, "key '" + key + "': not an integer: '" + value + "'");
    }
  }
  return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw Error(ErrorCode::BadConfig, "key '" + key + "': empty list");
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// Applies one key; unknown keys are rejected.
inline void apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "lr0") c.train.lr0 = parse_number<double>(key, value);
  else if (key == "momentum") c.train.momentum = parse_number<double>(key, value);
  else if (key == "weight_decay") c.train.weight_decay = parse_number<double>(key, value);
  else if (key == "lr_step_iters") c.train.lr_step_iters = parse_number<long>(key, value);
  else if (key == "lr_factor") c.train.lr_factor = parse_number<double>(key, value);
  else if (key == "max_iters") c.train.max_iters = parse_number<long>(key, value);
  else if (key == "patch") c.train.patch = parse_number<int>(key, value);
  else if (key == "patches_per_batch") c.train.patches_per_batch = parse_number<int>(key, value);
  else if (key == "batches_per_scene") c.train.batches_per_scene = parse_number<int>(key, value);
  else if (key == "seed") c.train.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "mode") c.train.loss.mode = parse_loss_mode(value);
  else if (key == "lambda_seg") c.train.loss.lambda_seg = parse_number<double>(key, value);
  else if (key == "lambda_dist") c.train.loss.lambda_dist = parse_number<double>(key, value);
  else if (key == "init_from") c.train.init_from = value;
  else if (key == "stages") c.net.stages = parse_number<int>(key, value);
  else if (key == "channels") c.net.channels_per_stage = detail::parse_int_list(key, value);
  else if (key == "convs") c.net.convs_per_stage = detail::parse_int_list(key, value);
  else if (key == "kernel_size") c.net.kernel_size = parse_number<int>(key, value);
  else if (key == "radius") c.labels.radius = parse_number<double>(key, value);
  else if (key == "bins") {
    c.labels.bins = parse_number<int>(key, value);
    c.net.num_distance_classes = c.labels.bins;
  } else if (key == "threshold_bin") c.threshold_bin = parse_number<int>(key, value);
  else if (key == "data_root") c.data_root = value;
  else if (key == "split") c.split = value;
  else if (key == "val_fraction") c.val_fraction = parse_number<double>(key, value);
  else if (key == "split_seed") c.split_seed = parse_number<std::uint64_t>(key, value);
  else throw Error(ErrorCode::BadConfig, "unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_config_value(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot open config " + path);
  return parse_config(is, std::move(base));
}

/// Resolved configuration in the same key = value format parse_config reads.
inline std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "lr0 = " << c.train.lr0 << '\n'
     << "momentum = " << c.train.momentum << '\n'
     << "weight_decay = " << c.train.weight_decay << '\n'
     << "lr_step_iters = " << c.train.lr_step_iters << '\n'
     << "lr_factor = " << c.train.lr_factor << '\n'
     << "max_iters = " << c.train.max_iters << '\n'
     << "patch = " << c.train.patch << '\n'
     << "patches_per_batch = " << c.train.patches_per_batch << '\n'
     << "batches_per_scene = " << c.train.batches_per_scene << '\n'
     << "seed = " << c.train.seed << '\n'
     << "mode = " << to_string(c.train.loss.mode) << '\n'
     << "lambda_seg = " << c.train.loss.lambda_seg << '\n'
     << "lambda_dist = " << c.train.loss.lambda_dist << '\n';
  if (!c.train.init_from.empty()) os << "init_from = " << c.train.init_from << '\n';
  os << "stages = " << c.net.stages << '\n'
     << "channels = " << detail::join(c.net.channels_per_stage) << '\n'
     << "convs = " << detail::join(c.net.convs_per_stage) << '\n'
     << "kernel_size = " << c.net.kernel_size << '\n'
     << "radius = " << c.labels.radius << '\n'
     << "bins = " << c.labels.bins << '\n'
     << "threshold_bin = " << c.resolved_threshold_bin() << '\n';
  if (!c.data_root.empty()) os << "data_root = " << c.data_root << '\n';
  os << "split = " << c.split << '\n'
     << "val_fraction = " << c.val_fraction << '\n'
     << "split_seed = " << c.split_seed << '\n';
  return os.str();
}

}  // namespace bfseg
