// SPDX-License-Identifier: Apache-2.0
//
// Toy pre-LN transformer backbone with residual bottleneck adapters in
// parallel with the MLP sub-block, a projection head for contrastive learning
// and a cosine prototype classifier.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lagcd/activations.hpp"
#include "lagcd/tensor.hpp"

namespace lagcd {

struct BackboneConfig {
  std::size_t token_dim = 16;  // width of one input token before the patch embedding
  std::size_t embed_dim = 32;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 2;
  std::size_t mlp_hidden = 128;
  std::size_t seq_len = 9;  // class token + content tokens

  std::size_t content_tokens() const { return seq_len - 1; }
  void validate() const;
};

struct AdapterConfig {
  std::size_t bottleneck_dim = 8;
  double scale = 0.1;
  Activation activation = Activation::linear();
  /// Adapted blocks, counted from the top block downward.
  std::size_t adapted_blocks = 4;
  double dropout = 0.1;

  void validate(const BackboneConfig& backbone) const;
};

struct HeadConfig {
  std::size_t proj_dim = 16;
  std::size_t num_classes = 10;
};

struct ModelConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  HeadConfig head;

  void validate() const;
};

struct AdapterBranch {
  Tensor ln_gamma, ln_beta;
  Tensor w_down, b_down;  // [d_hat x d], [d_hat]
  Tensor w_up, b_up;      // [d x d_hat], [d]
};

struct TransformerBlock {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Counts exact zeros of the adapter bottleneck activations seen during a forward pass.
struct SparsityProbe {
  std::size_t zeros = 0;
  std::size_t total = 0;

  void observe(const Tensor& activations);
  double fraction() const;
};

struct ForwardContext {
  /// Enables adapter dropout; requires `rng`.
  bool training = false;
  std::mt19937_64* rng = nullptr;
  SparsityProbe* probe = nullptr;
};

/// act(LN(x) W_down^T + b_down) W_up^T + b_up, with identity act for Linear.
/// Dropout sits between the projections and is active only when ctx.training.
Tensor adapter_forward(const AdapterBranch& branch, const Activation& kind, double dropout, const Tensor& x,
                       ForwardContext& ctx);

/// Pre-LN attention sub-block, then MLP(LN(y)) + y + s_a * adapter(y).
Tensor block_forward(const TransformerBlock& block, const AdapterBranch* adapter, const AdapterConfig& acfg,
                     const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads, ForwardContext& ctx);

/// Cosine similarity between l2-normalized features [B x d] and prototypes [K x d].
Tensor prototype_cosine(const Tensor& prototypes, const Tensor& h);
/// softmax(cos(h, c_k) / tau) per row.
Tensor prototype_probs(const Tensor& prototypes, const Tensor& h, double tau);

struct ParamCount {
  std::size_t adapters = 0;
  std::size_t projection_head = 0;
  std::size_t prototypes = 0;
  std::size_t total() const { return adapters + projection_head + prototypes; }
};

/// Adapter parameters are (d*d_hat*2 + d_hat + d + d*2) * n; head and
/// prototype parameters are reported separately.
ParamCount count_tunable_params(const BackboneConfig& backbone, const AdapterConfig& adapter,
                                const HeadConfig& head = {});

struct StoredParameter {
  Shape shape;
  std::vector<double> data;
  friend bool operator==(const StoredParameter&, const StoredParameter&) = default;
};
using ParameterSet = std::map<std::string, StoredParameter>;

enum class ParameterGroup { Backbone, Adapter, Head };
ParameterGroup parameter_group(const std::string& name);

enum class TrainingPhase {
  Frozen,    // nothing trainable
  Pretrain,  // backbone and projection head
  Finetune,  // adapters, projection head and prototypes
};

class GcdModel {
 public:
  /// Every parameter draws from its own stream seeded by (seed, name).
  GcdModel(ModelConfig config, std::uint64_t seed);

  GcdModel(const GcdModel&) = delete;
  GcdModel& operator=(const GcdModel&) = delete;
  GcdModel(GcdModel&&) = default;
  GcdModel& operator=(GcdModel&&) = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// tokens: batch x content_tokens x token_dim values in row-major order.
  /// Returns the layer-normalized class-token row of the final block, [batch x embed_dim].
  Tensor features(std::span<const double> tokens, std::size_t batch, ForwardContext& ctx) const;
  /// Projection head output, l2-normalized rows.
  Tensor project(const Tensor& h) const;
  const Tensor& prototypes() const { return prototypes_; }

  const std::map<std::string, Tensor>& named_parameters() const { return params_; }
  std::vector<Tensor> trainable_parameters() const;
  void set_phase(TrainingPhase phase);

  bool is_adapted(std::size_t block) const;
  const AdapterBranch* adapter(std::size_t block) const;

  ParameterSet snapshot() const;
  /// Copies every parameter in `params` whose group is listed. Shapes must match.
  /// Returns the number of tensors copied.
  std::size_t load(const ParameterSet& params, std::span<const ParameterGroup> groups);
  std::size_t load(const ParameterSet& params);

 private:
  Tensor& add_param(const std::string& name, Shape shape);
  void init_uniform_fan_in(const std::string& name, Tensor& t, std::size_t fan_in);
  void init_normal(const std::string& name, Tensor& t, double stddev);

  ModelConfig config_;
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;

  Tensor embed_w_, embed_b_, cls_token_, pos_embed_;
  Tensor norm_gamma_, norm_beta_;
  std::vector<TransformerBlock> blocks_;
  std::vector<AdapterBranch> adapters_;  // indexed by block; empty tensors when not adapted
  std::vector<Tensor> proj_w_, proj_b_;
  Tensor prototypes_;
};

/// FNV-1a digest over the bytes of all parameters in `groups`, in name order.
std::uint64_t parameter_digest(const GcdModel& model, std::span<const ParameterGroup> groups);

}  // namespace lagcd
