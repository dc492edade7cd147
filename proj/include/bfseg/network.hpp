#pragma once

// Encoder-decoder with pooling-index unpooling and a cascaded output:
//
//   encoder (conv+relu)* / maxpool  ->  decoder unpool / (conv+relu)*
//     -> H_dist (K logits) -> relu -> concat with decoder features -> H_seg (2 logits)
//
// Parameters, including the two task log-variances, live in a ParamStore with
// a stable, name-ordered layout that the checkpoint format mirrors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bfseg/distxform.hpp"
#include "bfseg/error.hpp"
#include "bfseg/kernels.hpp"
#include "bfseg/tensor.hpp"

namespace bfseg {

struct NetworkConfig {
  int stages = 3;
  std::vector<int> channels_per_stage{16, 32, 64};
  std::vector<int> convs_per_stage{2, 2, 2};
  int kernel_size = 3;
  int num_distance_classes = 10;
  int num_seg_classes = 2;
  int input_channels = 3;

  void validate() const {
    if (stages < 1) throw Error(ErrorCode::BadConfig, "stages must be >= 1");
    if (static_cast<int>(channels_per_stage.size()) != stages ||
        static_cast<int>(convs_per_stage.size()) != stages) {
      throw Error(ErrorCode::BadConfig, "per-stage lists must have one entry per stage");
    }
    for (int c : channels_per_stage)
      if (c < 1) throw Error(ErrorCode::BadConfig, "channel counts must be positive");
    for (int c : convs_per_stage)
      if (c < 1) throw Error(ErrorCode::BadConfig, "each stage needs at least one conv");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw Error(ErrorCode::BadConfig, "kernel size must be odd");
    if (num_distance_classes < 2 || num_seg_classes < 2 || input_channels < 1) {
      throw Error(ErrorCode::BadConfig, "class and input channel counts out of range");
    }
  }

  int divisor() const { return 1 << stages; }

  void check_input_extent(int height, int width) const {
    if (height % divisor() != 0 || width % divisor() != 0) {
      throw Error(ErrorCode::ShapeMismatch, "input extent " + std::to_string(height) + "x" +
                                                std::to_string(width) + " not divisible by " +
                                                std::to_string(divisor()));
    }
  }

  /// Channels of the last decoder layer (the input of H_dist).
  int feature_channels() const { return channels_per_stage.front(); }
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // weight decay applies
};

inline constexpr const char* kSegLogVarName = "task.s_seg";
inline constexpr const char* kDistLogVarName = "task.s_dist";

/// Named parameters with gradient slots of identical shape; iteration order
/// is insertion order and therefore deterministic.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<int> shape, bool decay = true) {
    if (find(name)) throw Error(ErrorCode::DuplicateId, "duplicate parameter " + name);
    Tensor<T> value(shape);
    Tensor<T> grad(std::move(shape));
    params_.push_back(Param<T>{std::move(name), std::move(value), std::move(grad), decay});
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Param<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Param<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error(ErrorCode::BadConfig, "unknown parameter " + name);
  }
  const Param<T>& get(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw Error(ErrorCode::BadConfig, "unknown parameter " + name);
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> dist_logits;
  Tensor<T> seg_logits;
  std::vector<PoolIndices> pool_indices;  // one per stage, encoder order

  // Backward caches. conv_inputs[i] / conv_outputs[i] follow conv_layers order
  // (encoder, decoder); outputs are post-ReLU.
  std::vector<Tensor<T>> conv_inputs;
  std::vector<Tensor<T>> conv_outputs;
  Tensor<T> features;  // last decoder layer output
  Tensor<T> head_concat;
  bool has_cache = false;
};

template <typename T>
class Network {
 public:
  struct ConvLayer {
    std::size_t weight;  // ParamStore slots
    std::size_t bias;
  };

  explicit Network(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    build();
  }

  const NetworkConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }

  Param<T>& seg_log_variance() { return params_[seg_logvar_]; }
  Param<T>& dist_log_variance() { return params_[dist_logvar_]; }
  T s_seg() const { return params_[seg_logvar_].value[0]; }
  T s_dist() const { return params_[dist_logvar_].value[0]; }

  const std::vector<ConvLayer>& encoder_layers() const noexcept { return encoder_; }
  const std::vector<ConvLayer>& decoder_layers() const noexcept { return decoder_; }
  const ConvLayer& dist_head() const noexcept { return dist_head_; }
  const ConvLayer& seg_head() const noexcept { return seg_head_; }

  /// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, zero log-variances.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : params_) {
      if (p.value.rank() == 4) {
        const double fan_in = static_cast<double>(p.value.dim(1)) * p.value.dim(2) * p.value.dim(3);
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
      } else {
        p.value.fill(T{0});
      }
      p.grad.fill(T{0});
    }
  }

  ForwardOutputs<T> forward(const Tensor<T>& batch, bool keep_cache = true) const {
    if (batch.rank() != 4 || batch.c() != config_.input_channels) {
      throw Error(ErrorCode::ShapeMismatch, "network input must be (N, " +
                                                std::to_string(config_.input_channels) + ", H, W), got " +
                                                shape_string(batch.shape()));
    }
    config_.check_input_extent(batch.h(), batch.w());
    require_finite(batch, "network input");

    ForwardOutputs<T> out;
    Tensor<T> x = batch;
    auto conv_relu = [&](const ConvLayer& layer, Tensor<T> in) {
      Tensor<T> y = relu(conv2d_forward(in, params_[layer.weight].value, params_[layer.bias].value));
      if (keep_cache) {
        out.conv_inputs.push_back(std::move(in));
        out.conv_outputs.push_back(y);
      }
      return y;
    };

    std::size_t layer = 0;
    for (int s = 0; s < config_.stages; ++s) {
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) x = conv_relu(encoder_[layer++], std::move(x));
      auto pooled = maxpool2x2_forward(x);
      x = std::move(pooled.output);
      out.pool_indices.push_back(std::move(pooled.indices));
    }
    layer = 0;
    for (int s = config_.stages - 1; s >= 0; --s) {
      x = maxunpool2x2(x, out.pool_indices[s]);
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) x = conv_relu(decoder_[layer++], std::move(x));
    }

    out.dist_logits = conv2d_forward(x, params_[dist_head_.weight].value, params_[dist_head_.bias].value);
    Tensor<T> cat = concat_channels(x, relu(out.dist_logits));
    out.seg_logits = conv2d_forward(cat, params_[seg_head_.weight].value, params_[seg_head_.bias].value);
    require_finite(out.dist_logits, "distance logits");
    require_finite(out.seg_logits, "segmentation logits");
    if (keep_cache) {
      out.features = std::move(x);
      out.head_concat = std::move(cat);
      out.has_cache = true;
    }
    return out;
  }

  /// Writes dL/dtheta for every network parameter given the loss gradients
  /// w.r.t. both logit maps. Gradient slots are overwritten, except the task
  /// log-variances, which the loss owns and which are left untouched.
  void backward(const ForwardOutputs<T>& fwd, const Tensor<T>& grad_dist_logits,
                const Tensor<T>& grad_seg_logits) {
    if (!fwd.has_cache) throw Error(ErrorCode::MissingCache, "forward was run without caches");
    if (grad_dist_logits.shape() != fwd.dist_logits.shape() || grad_seg_logits.shape() != fwd.seg_logits.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "logit gradient shapes differ from forward outputs");
    }
    for (auto& p : params_) {
      if (p.value.rank() == 4 || p.name.ends_with(".bias")) p.grad.fill(T{0});
    }

    Tensor<T> g_cat;
    conv2d_backward(fwd.head_concat, params_[seg_head_.weight].value, grad_seg_logits, &g_cat,
                    params_[seg_head_.weight].grad, params_[seg_head_.bias].grad);
    auto [g_feat, g_relu_dist] = split_channels(g_cat, fwd.features.c());
    Tensor<T> g_dist = relu_backward(relu(fwd.dist_logits), g_relu_dist);
    for (std::size_t i = 0; i < g_dist.size(); ++i) g_dist[i] += grad_dist_logits[i];
    Tensor<T> g_feat_from_dist;
    conv2d_backward(fwd.features, params_[dist_head_.weight].value, g_dist, &g_feat_from_dist,
                    params_[dist_head_.weight].grad, params_[dist_head_.bias].grad);
    for (std::size_t i = 0; i < g_feat.size(); ++i) g_feat[i] += g_feat_from_dist[i];

    Tensor<T> g = std::move(g_feat);
    std::size_t cache = fwd.conv_inputs.size();
    std::size_t layer = decoder_.size();
    for (int s = 0; s < config_.stages; ++s) {
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) {
        --cache;
        g = conv_backward(decoder_[--layer], fwd, cache, g, true);
      }
      g = maxunpool2x2_backward(g, fwd.pool_indices[s]);
    }
    layer = encoder_.size();
    for (int s = config_.stages - 1; s >= 0; --s) {
      g = maxpool2x2_backward(g, fwd.pool_indices[s]);
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) {
        --cache;
        g = conv_backward(encoder_[--layer], fwd, cache, g, cache != 0);
      }
    }
  }

 private:
  Tensor<T> conv_backward(const ConvLayer& layer, const ForwardOutputs<T>& fwd, std::size_t cache,
                          const Tensor<T>& grad_out, bool need_input_grad) {
    Tensor<T> g_pre = relu_backward(fwd.conv_outputs[cache], grad_out);
    Tensor<T> g_in;
    conv2d_backward(fwd.conv_inputs[cache], params_[layer.weight].value, g_pre, need_input_grad ? &g_in : nullptr,
                    params_[layer.weight].grad, params_[layer.bias].grad);
    return g_in;
  }

  ConvLayer add_conv(const std::string& prefix, int cin, int cout) {
    const int k = config_.kernel_size;
    ConvLayer layer;
    layer.weight = params_.add(prefix + ".weight", {cout, cin, k, k});
    layer.bias = params_.add(prefix + ".bias", {cout});
    return layer;
  }

  void build() {
    int cin = config_.input_channels;
    for (int s = 0; s < config_.stages; ++s) {
      const int c = config_.channels_per_stage[s];
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) {
        encoder_.push_back(add_conv("enc" + std::to_string(s) + ".conv" + std::to_string(i), cin, c));
        cin = c;
      }
    }
    for (int s = config_.stages - 1; s >= 0; --s) {
      const int c = config_.channels_per_stage[s];
      const int c_next = s > 0 ? config_.channels_per_stage[s - 1] : c;
      for (int i = 0; i < config_.convs_per_stage[s]; ++i) {
        const bool last = i + 1 == config_.convs_per_stage[s];
        const int cout = last ? c_next : c;
        decoder_.push_back(add_conv("dec" + std::to_string(s) + ".conv" + std::to_string(i), cin, cout));
        cin = cout;
      }
    }
    const int feat = config_.feature_channels();
    dist_head_ = add_conv("head_dist", feat, config_.num_distance_classes);
    seg_head_ = add_conv("head_seg", feat + config_.num_distance_classes, config_.num_seg_classes);
    seg_logvar_ = params_.add(kSegLogVarName, {1}, /*decay=*/false);
    dist_logvar_ = params_.add(kDistLogVarName, {1}, /*decay=*/false);
  }

  NetworkConfig config_;
  ParamStore<T> params_;
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> decoder_;
  ConvLayer dist_head_{};
  ConvLayer seg_head_{};
  std::size_t seg_logvar_ = 0;
  std::size_t dist_logvar_ = 0;
};

// Checkpoint: "FCKP", u32 version, u32 tensor count, then per tensor
// u32 name length, UTF-8 name, u8 dtype tag (0 = f32), u32 rank, u32 extents,
// f32 values; all little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& params) {
  os.write("FCKP", 4);
  detail::put_le(os, kCheckpointVersion);
  detail::put_le(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le(os, kDtypeF32);
    detail::put_le(os, static_cast<std::uint32_t>(p.value.rank()));
    for (int e : p.value.shape()) detail::put_le(os, static_cast<std::uint32_t>(e));
    for (T v : p.value.values()) detail::put_le(os, static_cast<float>(v));
  }
  if (!os) throw Error(ErrorCode::IoError, "failed writing checkpoint");
}

/// Loads every tensor by name; the checkpoint must hold exactly the store's
/// parameters with identical shapes.
template <typename T>
void read_checkpoint(std::istream& is, ParamStore<T>& params) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FCKP", 4) != 0) {
    throw Error(ErrorCode::BadFormat, "missing FCKP magic");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw Error(ErrorCode::BadFormat, "unsupported checkpoint version");
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != params.size()) {
    throw Error(ErrorCode::BadFormat, "checkpoint holds " + std::to_string(count) + " tensors, model has " +
                                          std::to_string(params.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = detail::get_le<std::uint32_t>(is);
    if (len > 4096) throw Error(ErrorCode::BadFormat, "tensor name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error(ErrorCode::BadFormat, "truncated tensor name");
    if (detail::get_le<std::uint8_t>(is) != kDtypeF32) throw Error(ErrorCode::BadFormat, "unsupported dtype");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 8) throw Error(ErrorCode::BadFormat, "implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(detail::get_le<std::uint32_t>(is));
    Param<T>* p = params.find(name);
    if (!p) throw Error(ErrorCode::BadFormat, "checkpoint tensor " + name + " not in model");
    if (p->value.shape() != shape) {
      throw Error(ErrorCode::BadFormat, "shape mismatch for " + name + ": " + shape_string(shape) + " vs " +
                                            shape_string(p->value.shape()));
    }
    for (auto& v : p->value.values()) v = static_cast<T>(detail::get_le<float>(is));
  }
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path);
  write_checkpoint(os, params);
}

template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path);
  read_checkpoint(is, params);
}

}  // namespace bfseg
