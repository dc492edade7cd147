#pragma once

// SGD with momentum and weight decay under a step learning-rate schedule,
// patch sampling with flip augmentation, and the training loop shared by all
// four loss regimes.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bfseg/data.hpp"
#include "bfseg/distxform.hpp"
#include "bfseg/error.hpp"
#include "bfseg/loss.hpp"
#include "bfseg/network.hpp"

namespace bfseg {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  long lr_step_iters = 2000;
  double lr_factor = 0.1;
  long max_iters = 5000;
  int patch = 128;
  int patches_per_batch = 4;
  std::uint64_t seed = 1;
  LossConfig loss;
  std::string init_from;   // empty = fresh initialization
  int batches_per_scene = 0;  // 0: every patch draws its own scene

  void validate(const NetworkConfig& net) const {
    if (!(lr0 > 0.0)) throw Error(ErrorCode::BadConfig, "lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::BadConfig, "momentum must be in [0, 1)");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw Error(ErrorCode::BadConfig, "lr_factor must be in (0, 1)");
    if (weight_decay < 0.0) throw Error(ErrorCode::BadConfig, "weight_decay must be non-negative");
    if (lr_step_iters < 1 || max_iters < 0) throw Error(ErrorCode::BadConfig, "iteration counts out of range");
    if (patch < 1 || patch % net.divisor() != 0) {
      throw Error(ErrorCode::BadConfig, "patch must be divisible by 2^stages = " + std::to_string(net.divisor()));
    }
    if (patches_per_batch < 1 || batches_per_scene < 0) throw Error(ErrorCode::BadConfig, "batch settings out of range");
    loss.validate();
  }
};

/// lr0 * factor^floor(iter / step).
inline double scheduled_lr(const TrainConfig& cfg, long iteration) {
  return cfg.lr0 * std::pow(cfg.lr_factor, static_cast<double>(iteration / cfg.lr_step_iters));
}

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> velocity;
  long iteration = 0;
  double lr = 0.0;

  explicit OptimizerState(const ParamStore<T>& params, double lr0) : lr(lr0) {
    for (const auto& p : params) velocity.emplace_back(p.value.shape());
  }
};

/// v <- momentum * v + (grad + decay * w);  w <- w - lr * v. Task
/// log-variances are never decayed. Advances the iteration counter and lr.
template <typename T>
void sgd_step(ParamStore<T>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size()) throw Error(ErrorCode::MissingGradient, "optimizer/param count mismatch");
  state.lr = scheduled_lr(cfg, state.iteration);
  const T lr = static_cast<T>(state.lr);
  const T mom = static_cast<T>(cfg.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = params[i];
    if (p.grad.size() != p.value.size()) throw Error(ErrorCode::MissingGradient, "no gradient slot for " + p.name);
    const T decay = p.decay ? static_cast<T>(cfg.weight_decay) : T{0};
    Tensor<T>& v = state.velocity[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = mom * v[j] + (p.grad[j] + decay * p.value[j]);
      p.value[j] -= lr * v[j];
    }
  }
  ++state.iteration;
  state.lr = scheduled_lr(cfg, state.iteration);
}

/// A scene with its precomputed distance-class targets.
struct TrainingScene {
  const Scene* scene = nullptr;
  Grid<std::uint8_t> dist_bins;
};

struct LabelConfig {
  double radius = 20.0;
  int bins = 10;
};

inline std::vector<TrainingScene> prepare_targets(const std::vector<Scene>& scenes, const LabelConfig& labels) {
  const BinSpec spec(labels.bins, labels.radius);
  std::vector<TrainingScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    out.push_back({&s, quantize(signed_truncated_distance(s.mask, labels.radius), spec).bins});
  }
  return out;
}

struct CropDecision {
  std::size_t scene = 0;
  int y0 = 0;
  int x0 = 0;
  bool flip_h = false;
  bool flip_v = false;

  friend bool operator==(const CropDecision&, const CropDecision&) = default;
};

template <typename T>
struct PatchBatch {
  Tensor<T> images;                      // (N, 3, P, P)
  std::vector<std::uint8_t> seg_targets;  // (N, P, P)
  std::vector<std::uint8_t> dist_targets;
  std::vector<CropDecision> crops;
};

/// Draws crop decisions in a fixed order from the sampler's own generator.
class PatchSampler {
 public:
  /// extents: (height, width) of every scene.
  PatchSampler(std::vector<std::pair<int, int>> extents, int patch, int per_batch, int batches_per_scene,
               std::uint64_t seed)
      : extents_(std::move(extents)), patch_(patch), per_batch_(per_batch), batches_per_scene_(batches_per_scene),
        rng_(seed) {
    if (extents_.empty()) throw Error(ErrorCode::EmptySplit, "no training scenes");
    for (auto [h, w] : extents_) {
      if (h < patch || w < patch) throw Error(ErrorCode::SceneTooSmall, "scene smaller than patch");
    }
  }

  std::vector<CropDecision> next() {
    std::uniform_int_distribution<std::size_t> pick(0, extents_.size() - 1);
    std::bernoulli_distribution coin(0.5);
    if (batches_per_scene_ > 0 && batch_in_scene_ == 0) current_scene_ = pick(rng_);
    std::vector<CropDecision> out;
    for (int i = 0; i < per_batch_; ++i) {
      CropDecision d;
      d.scene = batches_per_scene_ > 0 ? current_scene_ : pick(rng_);
      const auto [h, w] = extents_[d.scene];
      d.y0 = std::uniform_int_distribution<int>(0, h - patch_)(rng_);
      d.x0 = std::uniform_int_distribution<int>(0, w - patch_)(rng_);
      d.flip_h = coin(rng_);
      d.flip_v = coin(rng_);
      out.push_back(d);
    }
    if (batches_per_scene_ > 0) batch_in_scene_ = (batch_in_scene_ + 1) % batches_per_scene_;
    return out;
  }

 private:
  std::vector<std::pair<int, int>> extents_;
  int patch_, per_batch_, batches_per_scene_;
  std::mt19937_64 rng_;
  std::size_t current_scene_ = 0;
  int batch_in_scene_ = 0;
};

/// Applies crop decisions identically to image, mask and distance targets.
template <typename T>
PatchBatch<T> assemble_batch(const std::vector<TrainingScene>& scenes, const std::vector<CropDecision>& crops, int patch) {
  const int n = static_cast<int>(crops.size());
  const std::size_t plane = static_cast<std::size_t>(patch) * patch;
  PatchBatch<T> b{Tensor<T>({n, 3, patch, patch}), std::vector<std::uint8_t>(n * plane),
                  std::vector<std::uint8_t>(n * plane), crops};
  for (int i = 0; i < n; ++i) {
    const CropDecision& d = crops[static_cast<std::size_t>(i)];
    const TrainingScene& ts = scenes.at(d.scene);
    const Scene& s = *ts.scene;
    if (s.mask.height() < patch || s.mask.width() < patch) throw Error(ErrorCode::SceneTooSmall, s.id);
    image_to_tensor(s.image, b.images, i, d.y0, d.x0, patch, patch, d.flip_h, d.flip_v);
    for (int y = 0; y < patch; ++y) {
      const int sy = d.y0 + (d.flip_v ? patch - 1 - y : y);
      for (int x = 0; x < patch; ++x) {
        const int sx = d.x0 + (d.flip_h ? patch - 1 - x : x);
        const std::size_t o = i * plane + static_cast<std::size_t>(y) * patch + x;
        b.seg_targets[o] = s.mask(sy, sx);
        b.dist_targets[o] = ts.dist_bins(sy, sx);
      }
    }
  }
  return b;
}

/// Forward, both task NLLs, the configured total loss, and backward into the
/// parameter gradient slots (including the task log-variances).
template <typename T>
LossBreakdown loss_and_gradients(Network<T>& net, const Tensor<T>& images, std::span<const std::uint8_t> seg_targets,
                                 std::span<const std::uint8_t> dist_targets, const LossConfig& cfg) {
  const ForwardOutputs<T> fwd = net.forward(images);
  NllResult<T> seg = nll_pixelwise(fwd.seg_logits, seg_targets);
  NllResult<T> dist = nll_pixelwise(fwd.dist_logits, dist_targets);
  const TaskWeights tw{static_cast<double>(net.s_seg()), static_cast<double>(net.s_dist())};
  const LossBreakdown b = total_loss(static_cast<double>(seg.value), static_cast<double>(dist.value), tw, cfg);
  if (!std::isfinite(b.total)) {
    throw Error(ErrorCode::NonFinite, "non-finite loss (seg_nll=" + std::to_string(b.seg_nll) +
                                          ", dist_nll=" + std::to_string(b.dist_nll) + ", s_seg=" +
                                          std::to_string(b.s_seg) + ", s_dist=" + std::to_string(b.s_dist) + ")");
  }
  const T ws = static_cast<T>(b.d_seg_nll), wd = static_cast<T>(b.d_dist_nll);
  for (auto& g : seg.grad.values()) g *= ws;
  for (auto& g : dist.grad.values()) g *= wd;
  net.backward(fwd, dist.grad, seg.grad);
  net.seg_log_variance().grad[0] = static_cast<T>(b.d_s_seg);
  net.dist_log_variance().grad[0] = static_cast<T>(b.d_s_dist);
  return b;
}

struct RunResult {
  std::vector<LossBreakdown> trace;
  std::vector<std::string> checkpoints;
  double seconds = 0.0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(long, const LossBreakdown&, double)> on_iteration;
};

/// Trains `net` for cfg.max_iters iterations. Loads cfg.init_from first when
/// set. Writes loss.ndjson and checkpoints (every lr step and at the end) when
/// an output directory is given. Aborts on a non-finite loss.
template <typename T>
RunResult run_experiment(Network<T>& net, const std::vector<Scene>& train, const LabelConfig& labels,
                         const TrainConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate(net.config());
  if (train.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (!cfg.init_from.empty()) load_checkpoint(cfg.init_from, net.params());

  const auto start = std::chrono::steady_clock::now();
  const std::vector<TrainingScene> targets = prepare_targets(train, labels);
  std::vector<std::pair<int, int>> extents;
  for (const auto& s : train) extents.emplace_back(s.mask.height(), s.mask.width());
  PatchSampler sampler(std::move(extents), cfg.patch, cfg.patches_per_batch, cfg.batches_per_scene, cfg.seed);
  OptimizerState<T> state(net.params(), cfg.lr0);

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir / "loss.ndjson");
    if (!log) throw Error(ErrorCode::IoError, "cannot open loss log in " + opts.out_dir.string());
  }

  RunResult result;
  auto checkpoint = [&](const std::string& name) {
    if (opts.out_dir.empty()) return;
    const auto path = (opts.out_dir / name).string();
    save_checkpoint(path, net.params());
    result.checkpoints.push_back(path);
  };

  for (long it = 0; it < cfg.max_iters; ++it) {
    const auto crops = sampler.next();
    const PatchBatch<T> batch = assemble_batch<T>(targets, crops, cfg.patch);
    const double lr = scheduled_lr(cfg, it);
    const LossBreakdown b = loss_and_gradients(net, batch.images, batch.seg_targets, batch.dist_targets, cfg.loss);
    if (log.is_open()) write_loss_record(log, it, b, lr);
    if (opts.on_iteration) opts.on_iteration(it, b, lr);
    result.trace.push_back(b);
    sgd_step(net.params(), state, cfg);
    if ((it + 1) % cfg.lr_step_iters == 0 && it + 1 < cfg.max_iters) {
      checkpoint("iter" + std::to_string(it + 1) + ".fckp");
    }
  }
  checkpoint("final.fckp");
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace bfseg
