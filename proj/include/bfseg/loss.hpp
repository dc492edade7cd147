#pragma once

// Pixel-wise negative log likelihood and the cascaded multi-task objective.
// In uncertainty mode each task loss is exp(-s) * NLL + s with s = log(sigma^2)
// trainable per task.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bfseg/error.hpp"
#include "bfseg/tensor.hpp"

namespace bfseg {

enum class LossMode { SegOnly, DistOnly, MultitaskEqual, MultitaskUncertainty };

inline constexpr std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::SegOnly: return "seg_only";
    case LossMode::DistOnly: return "dist_only";
    case LossMode::MultitaskEqual: return "multitask_equal";
    case LossMode::MultitaskUncertainty: return "multitask_uncertainty";
  }
  return "unknown";
}

inline LossMode parse_loss_mode(std::string_view text) {
  for (LossMode m : {LossMode::SegOnly, LossMode::DistOnly, LossMode::MultitaskEqual, LossMode::MultitaskUncertainty}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::ModeMismatch, "unknown loss mode '" + std::string(text) + "'");
}

inline constexpr LossMode kAllModes[] = {LossMode::SegOnly, LossMode::DistOnly, LossMode::MultitaskEqual,
                                         LossMode::MultitaskUncertainty};

struct LossConfig {
  LossMode mode = LossMode::SegOnly;
  double lambda_seg = 1.0;
  double lambda_dist = 1.0;

  void validate() const {
    if (!(lambda_seg > 0.0) || !(lambda_dist > 0.0)) {
      throw Error(ErrorCode::BadConfig, "task importance factors must be positive");
    }
  }
};

struct TaskWeights {
  double s_seg = 0.0;
  double s_dist = 0.0;
};

template <typename T>
struct NllResult {
  T value{};
  Tensor<T> grad;  // dL/dlogits, same shape as logits
};

/// Mean over batch and pixels of -log softmax(logits)[target]. Targets are
/// class indices laid out (N, H, W) row-major.
template <typename T>
NllResult<T> nll_pixelwise(const Tensor<T>& logits, std::span<const std::uint8_t> targets, bool want_grad = true) {
  if (logits.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "logits must be rank 4");
  const int n = logits.n(), c = logits.c();
  const std::size_t hw = logits.plane();
  if (targets.size() != static_cast<std::size_t>(n) * hw) {
    throw Error(ErrorCode::ShapeMismatch, "target raster size does not match logits");
  }
  NllResult<T> r;
  if (want_grad) r.grad = Tensor<T>(logits.shape());
  const T inv_count = T{1} / static_cast<T>(static_cast<double>(n) * static_cast<double>(hw));
  double total = 0.0;
  std::vector<T> e(static_cast<std::size_t>(c));
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const int t = targets[static_cast<std::size_t>(b) * hw + i];
      if (t >= c) throw Error(ErrorCode::BadClassIndex, "target class " + std::to_string(t) + " >= " + std::to_string(c));
      T mx = -std::numeric_limits<T>::infinity();
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, logits.plane_ptr(b, ch)[i]);
      T sum{0};
      for (int ch = 0; ch < c; ++ch) {
        e[ch] = std::exp(logits.plane_ptr(b, ch)[i] - mx);
        sum += e[ch];
      }
      const T log_sum = std::log(sum) + mx;
      total += static_cast<double>(log_sum - logits.plane_ptr(b, t)[i]);
      if (want_grad) {
        for (int ch = 0; ch < c; ++ch) {
          const T p = e[ch] / sum;
          r.grad.plane_ptr(b, ch)[i] = (p - (ch == t ? T{1} : T{0})) * inv_count;
        }
      }
    }
  }
  r.value = static_cast<T>(total / (static_cast<double>(n) * static_cast<double>(hw)));
  return r;
}

/// exp(-s) * nll + s, the approximated uncertainty-weighted classification loss.
inline double uncertainty_task_loss(double nll, double s) { return std::exp(-s) * nll + s; }

/// d/ds of uncertainty_task_loss.
inline double uncertainty_task_loss_ds(double nll, double s) { return 1.0 - std::exp(-s) * nll; }

/// Exact negative log likelihood of softmax(logits / sigma2) for one pixel.
/// Used only to measure how far the approximated loss is from it.
inline double exact_scaled_nll(std::span<const double> logits, int target, double sigma2) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double f : logits) mx = std::max(mx, f / sigma2);
  double sum = 0.0;
  for (double f : logits) sum += std::exp(f / sigma2 - mx);
  return std::log(sum) + mx - logits[static_cast<std::size_t>(target)] / sigma2;
}

/// Approximated form for one pixel: (1/sigma2) * NLL(softmax(logits)) + log(sigma2).
inline double approx_scaled_nll(std::span<const double> logits, int target, double sigma2) {
  return exact_scaled_nll(logits, target, 1.0) / sigma2 + std::log(sigma2);
}

struct LossBreakdown {
  double total = 0.0;
  double seg_nll = 0.0;
  double dist_nll = 0.0;
  double s_seg = 0.0;
  double s_dist = 0.0;
  // Partial derivatives of total w.r.t. each task NLL and each log-variance.
  double d_seg_nll = 0.0;
  double d_dist_nll = 0.0;
  double d_s_seg = 0.0;
  double d_s_dist = 0.0;
};

inline LossBreakdown total_loss(double seg_nll, double dist_nll, const TaskWeights& weights, const LossConfig& cfg) {
  LossBreakdown r;
  r.seg_nll = seg_nll;
  r.dist_nll = dist_nll;
  r.s_seg = weights.s_seg;
  r.s_dist = weights.s_dist;
  switch (cfg.mode) {
    case LossMode::SegOnly:
      r.total = seg_nll;
      r.d_seg_nll = 1.0;
      break;
    case LossMode::DistOnly:
      r.total = dist_nll;
      r.d_dist_nll = 1.0;
      break;
    case LossMode::MultitaskEqual:
      r.total = cfg.lambda_seg * seg_nll + cfg.lambda_dist * dist_nll;
      r.d_seg_nll = cfg.lambda_seg;
      r.d_dist_nll = cfg.lambda_dist;
      break;
    case LossMode::MultitaskUncertainty:
      r.total = uncertainty_task_loss(seg_nll, weights.s_seg) + uncertainty_task_loss(dist_nll, weights.s_dist);
      r.d_seg_nll = std::exp(-weights.s_seg);
      r.d_dist_nll = std::exp(-weights.s_dist);
      r.d_s_seg = uncertainty_task_loss_ds(seg_nll, weights.s_seg);
      r.d_s_dist = uncertainty_task_loss_ds(dist_nll, weights.s_dist);
      break;
  }
  return r;
}

inline bool uses_seg(LossMode m) { return m != LossMode::DistOnly; }
inline bool uses_dist(LossMode m) { return m != LossMode::SegOnly; }

/// One newline-delimited JSON record per iteration.
inline void write_loss_record(std::ostream& os, long iteration, const LossBreakdown& b, double lr) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "{\"iter\":%ld,\"total\":%.9g,\"seg_nll\":%.9g,\"dist_nll\":%.9g,\"s_seg\":%.9g,\"s_dist\":%.9g,"
                "\"lr\":%.9g}\n",
                iteration, b.total, b.seg_nll, b.dist_nll, b.s_seg, b.s_dist, lr);
  os << buf;
}

}  // namespace bfseg
