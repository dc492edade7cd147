#pragma once

// Central finite-difference verification of the full backward pass (network
// cascade plus uncertainty-weighted loss, including both log-variances) on a
// miniature double-precision model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bfseg/distxform.hpp"
#include "bfseg/loss.hpp"
#include "bfseg/network.hpp"
#include "bfseg/trainer.hpp"

namespace bfseg {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // vanishing gradients from turning round-off into large ratios.
  double floor = 1e-6;
  int extent = 8;
  int batch = 2;
  LossMode mode = LossMode::MultitaskUncertainty;
  bool corrupt_gradient = false;  // negative-control hook
};

struct GradCheckGroup {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline NetworkConfig gradcheck_network_config() {
  NetworkConfig c;
  c.stages = 2;
  c.channels_per_stage = {4, 6};
  c.convs_per_stage = {2, 2};
  c.num_distance_classes = 4;
  return c;
}

/// Miniature problem: random image batch, random masks, their distance-class
/// targets and a network with non-trivial task log-variances.
struct GradCheckProblem {
  Network<double> net;
  Tensor<double> images;
  std::vector<std::uint8_t> seg_targets;
  std::vector<std::uint8_t> dist_targets;
};

inline GradCheckProblem make_gradcheck_problem(const GradCheckOptions& opt) {
  const NetworkConfig cfg = gradcheck_network_config();
  GradCheckProblem p{Network<double>(cfg), Tensor<double>({opt.batch, 3, opt.extent, opt.extent}), {}, {}};
  p.net.initialize(opt.seed);
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& v : p.images.values()) v = gauss(rng);
  for (auto& param : p.net.params()) {
    if (param.name.ends_with(".bias")) {
      for (auto& v : param.value.values()) v = u(rng);
    }
  }
  p.net.seg_log_variance().value[0] = 0.3;
  p.net.dist_log_variance().value[0] = -0.2;

  const BinSpec spec(cfg.num_distance_classes, 3.0);
  std::bernoulli_distribution coin(0.5);
  for (int b = 0; b < opt.batch; ++b) {
    Mask m(opt.extent, opt.extent);
    for (auto& v : m.storage()) v = coin(rng) ? 1 : 0;
    const auto dcm = quantize(signed_truncated_distance(m, spec.radius()), spec);
    p.seg_targets.insert(p.seg_targets.end(), m.storage().begin(), m.storage().end());
    p.dist_targets.insert(p.dist_targets.end(), dcm.bins.storage().begin(), dcm.bins.storage().end());
  }
  return p;
}

inline double gradcheck_loss(GradCheckProblem& p, const LossConfig& cfg) {
  const ForwardOutputs<double> fwd = p.net.forward(p.images, /*keep_cache=*/false);
  const double seg = nll_pixelwise(fwd.seg_logits, std::span<const std::uint8_t>(p.seg_targets), false).value;
  const double dist = nll_pixelwise(fwd.dist_logits, std::span<const std::uint8_t>(p.dist_targets), false).value;
  return total_loss(seg, dist, TaskWeights{p.net.s_seg(), p.net.s_dist()}, cfg).total;
}

inline GradCheckReport run_gradcheck(const GradCheckOptions& opt) {
  GradCheckProblem p = make_gradcheck_problem(opt);
  const LossConfig cfg{opt.mode, 1.0, 1.0};
  loss_and_gradients(p.net, p.images, p.seg_targets, p.dist_targets, cfg);

  std::vector<std::vector<double>> analytic;
  for (const auto& param : p.net.params()) analytic.emplace_back(param.grad.values().begin(), param.grad.values().end());
  if (opt.corrupt_gradient) {
    // Perturb one weight gradient by a relative 1%.
    auto& g = analytic.front();
    g[0] = g[0] * 1.01 + 1e-3;
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < p.net.params().size(); ++i) {
    auto& param = p.net.params()[i];
    GradCheckGroup group{param.name, param.value.size(), 0.0, 0.0};
    for (std::size_t j = 0; j < param.value.size(); ++j) {
      const double saved = param.value[j];
      param.value[j] = saved + opt.step;
      const double plus = gradcheck_loss(p, cfg);
      param.value[j] = saved - opt.step;
      const double minus = gradcheck_loss(p, cfg);
      param.value[j] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.floor});
      group.max_abs_error = std::max(group.max_abs_error, abs_err);
      group.max_rel_error = std::max(group.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace bfseg
