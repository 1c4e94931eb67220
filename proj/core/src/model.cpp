// SPDX-License-Identifier: Apache-2.0
#include "lagcd/model.hpp"

#include <algorithm>
#include <cmath>

#include "lagcd/errors.hpp"
#include "rng.hpp"

namespace lagcd {

namespace {

std::string block_name(std::size_t i, const char* leaf) { return "backbone.blocks." + std::to_string(i) + "." + leaf; }

std::string adapter_name(std::size_t i, const char* leaf) { return "adapter." + std::to_string(i) + "." + leaf; }

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void BackboneConfig::validate() const {
  if (embed_dim == 0 || token_dim == 0 || num_blocks == 0 || mlp_hidden == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (seq_len < 2) throw ConfigError("seq_len must be at least 2 (class token + one content token)");
}

void AdapterConfig::validate(const BackboneConfig& backbone) const {
  if (bottleneck_dim < 1 || bottleneck_dim > backbone.embed_dim) {
    throw ConfigError("bottleneck_dim must lie in [1, embed_dim]");
  }
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("adapter scale must be finite and >= 0");
  if (adapted_blocks > backbone.num_blocks) throw ConfigError("adapted_blocks exceeds num_blocks");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("adapter dropout must lie in [0, 1)");
}

void ModelConfig::validate() const {
  backbone.validate();
  adapter.validate(backbone);
  if (head.num_classes < 1) throw ConfigError("num_classes must be positive");
  if (head.proj_dim < 1) throw ConfigError("proj_dim must be positive");
}

// ---------------------------------------------------------------------------
// Building blocks

void SparsityProbe::observe(const Tensor& activations) {
  for (double v : activations.data())
    if (std::abs(v) <= 1e-12) ++zeros;
  total += activations.numel();
}

double SparsityProbe::fraction() const {
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

Tensor adapter_forward(const AdapterBranch& branch, const Activation& kind, double dropout, const Tensor& x,
                       ForwardContext& ctx) {
  if (x.cols() != branch.ln_gamma.numel()) {
    throw DimensionError("adapter: input " + shape_str(x.shape()) + " vs width " + shape_str(branch.ln_gamma.shape()));
  }
  Tensor u = layer_norm(x, branch.ln_gamma, branch.ln_beta);
  Tensor down = linear(u, branch.w_down, branch.b_down);
  if (kind.tag() != ActivationTag::Linear) down = apply(kind, down);
  if (ctx.probe != nullptr) ctx.probe->observe(down);
  if (ctx.training && dropout > 0.0) {
    if (ctx.rng == nullptr) throw PreconditionError("adapter dropout needs a random generator");
    std::bernoulli_distribution keep(1.0 - dropout);
    const double inv = 1.0 / (1.0 - dropout);
    std::vector<double> mask(down.numel());
    for (auto& m : mask) m = keep(*ctx.rng) ? inv : 0.0;
    down = mul(down, Tensor(down.shape(), std::move(mask)));
  }
  return linear(down, branch.w_up, branch.b_up);
}

Tensor block_forward(const TransformerBlock& block, const AdapterBranch* adapter, const AdapterConfig& acfg,
                     const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads, ForwardContext& ctx) {
  Tensor a = layer_norm(x, block.ln1_gamma, block.ln1_beta);
  Tensor att = attention(linear(a, block.wq, block.bq), linear(a, block.wk, block.bk), linear(a, block.wv, block.bv),
                         batch, seq, heads);
  Tensor y = add(x, linear(att, block.wo, block.bo));
  Tensor m = layer_norm(y, block.ln2_gamma, block.ln2_beta);
  Tensor mlp = linear(apply(Activation::gelu(), linear(m, block.fc1_w, block.fc1_b)), block.fc2_w, block.fc2_b);
  Tensor out = add(mlp, y);
  if (adapter != nullptr) {
    out = add(out, scale(adapter_forward(*adapter, acfg.activation, acfg.dropout, y, ctx), acfg.scale));
  }
  return out;
}

Tensor prototype_cosine(const Tensor& prototypes, const Tensor& h) {
  if (prototypes.cols() != h.cols()) {
    throw DimensionError("prototypes " + shape_str(prototypes.shape()) + " vs features " + shape_str(h.shape()));
  }
  return matmul(l2_normalize(h), transpose(l2_normalize(prototypes)));
}

Tensor prototype_probs(const Tensor& prototypes, const Tensor& h, double tau) {
  if (!(tau > 0.0)) throw PreconditionError("prototype temperature must be positive");
  return softmax(scale(prototype_cosine(prototypes, h), 1.0 / tau));
}

ParamCount count_tunable_params(const BackboneConfig& backbone, const AdapterConfig& adapter, const HeadConfig& head) {
  const std::size_t d = backbone.embed_dim, dh = adapter.bottleneck_dim, n = adapter.adapted_blocks;
  ParamCount count;
  count.adapters = (d * dh * 2 + dh + d + d * 2) * n;
  count.projection_head = (d * d + d) * 2 + d * head.proj_dim + head.proj_dim;
  count.prototypes = head.num_classes * d;
  return count;
}

ParameterGroup parameter_group(const std::string& name) {
  if (name.starts_with("adapter.")) return ParameterGroup::Adapter;
  if (name.starts_with("head.")) return ParameterGroup::Head;
  return ParameterGroup::Backbone;
}

// ---------------------------------------------------------------------------
// GcdModel

GcdModel::GcdModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const auto& bb = config_.backbone;
  const std::size_t d = bb.embed_dim;

  embed_w_ = add_param("backbone.embed.weight", {d, bb.token_dim});
  init_uniform_fan_in("backbone.embed.weight", embed_w_, bb.token_dim);
  embed_b_ = add_param("backbone.embed.bias", {d});
  cls_token_ = add_param("backbone.cls_token", {1, d});
  init_normal("backbone.cls_token", cls_token_, 0.02);
  pos_embed_ = add_param("backbone.pos_embed", {bb.seq_len, d});
  init_normal("backbone.pos_embed", pos_embed_, 0.02);

  const auto ones = [](Tensor& t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 1.0); };
  const auto weight = [&](const std::string& name, std::size_t out, std::size_t in) {
    Tensor& t = add_param(name, {out, in});
    init_uniform_fan_in(name, t, in);
    return t;
  };

  blocks_.resize(bb.num_blocks);
  for (std::size_t i = 0; i < bb.num_blocks; ++i) {
    auto& b = blocks_[i];
    b.ln1_gamma = add_param(block_name(i, "ln1.gamma"), {d});
    ones(b.ln1_gamma);
    b.ln1_beta = add_param(block_name(i, "ln1.beta"), {d});
    b.wq = weight(block_name(i, "attn.q.weight"), d, d);
    b.bq = add_param(block_name(i, "attn.q.bias"), {d});
    b.wk = weight(block_name(i, "attn.k.weight"), d, d);
    b.bk = add_param(block_name(i, "attn.k.bias"), {d});
    b.wv = weight(block_name(i, "attn.v.weight"), d, d);
    b.bv = add_param(block_name(i, "attn.v.bias"), {d});
    b.wo = weight(block_name(i, "attn.out.weight"), d, d);
    b.bo = add_param(block_name(i, "attn.out.bias"), {d});
    b.ln2_gamma = add_param(block_name(i, "ln2.gamma"), {d});
    ones(b.ln2_gamma);
    b.ln2_beta = add_param(block_name(i, "ln2.beta"), {d});
    b.fc1_w = weight(block_name(i, "mlp.fc1.weight"), bb.mlp_hidden, d);
    b.fc1_b = add_param(block_name(i, "mlp.fc1.bias"), {bb.mlp_hidden});
    b.fc2_w = weight(block_name(i, "mlp.fc2.weight"), d, bb.mlp_hidden);
    b.fc2_b = add_param(block_name(i, "mlp.fc2.bias"), {d});
  }

  norm_gamma_ = add_param("backbone.norm.gamma", {d});
  ones(norm_gamma_);
  norm_beta_ = add_param("backbone.norm.beta", {d});

  const auto& ac = config_.adapter;
  adapters_.resize(bb.num_blocks);
  for (std::size_t i = bb.num_blocks - ac.adapted_blocks; i < bb.num_blocks; ++i) {
    auto& a = adapters_[i];
    a.ln_gamma = add_param(adapter_name(i, "ln.gamma"), {d});
    ones(a.ln_gamma);
    a.ln_beta = add_param(adapter_name(i, "ln.beta"), {d});
    a.w_down = weight(adapter_name(i, "down.weight"), ac.bottleneck_dim, d);
    a.b_down = add_param(adapter_name(i, "down.bias"), {ac.bottleneck_dim});
    a.w_up = add_param(adapter_name(i, "up.weight"), {d, ac.bottleneck_dim});
    a.b_up = add_param(adapter_name(i, "up.bias"), {d});
  }

  const std::size_t widths[] = {d, d, d, config_.head.proj_dim};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string base = "head.proj." + std::to_string(l);
    proj_w_.push_back(weight(base + ".weight", widths[l + 1], widths[l]));
    proj_b_.push_back(add_param(base + ".bias", {widths[l + 1]}));
  }
  prototypes_ = add_param("head.prototypes", {config_.head.num_classes, d});
  init_normal("head.prototypes", prototypes_, 1.0 / std::sqrt(static_cast<double>(d)));
}

Tensor& GcdModel::add_param(const std::string& name, Shape shape) {
  auto [it, inserted] = params_.emplace(name, Tensor::zeros(std::move(shape)));
  if (!inserted) throw ConfigError("duplicate parameter " + name);
  return it->second;
}

void GcdModel::init_uniform_fan_in(const std::string& name, Tensor& t, std::size_t fan_in) {
  auto rng = detail::stream(seed_, name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

void GcdModel::init_normal(const std::string& name, Tensor& t, double stddev) {
  auto rng = detail::stream(seed_, name);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

Tensor GcdModel::features(std::span<const double> tokens, std::size_t batch, ForwardContext& ctx) const {
  const auto& bb = config_.backbone;
  const std::size_t content = bb.content_tokens(), seq = bb.seq_len;
  if (tokens.size() != batch * content * bb.token_dim) {
    throw DimensionError("features: got " + std::to_string(tokens.size()) + " values for batch " +
                         std::to_string(batch) + " of " + std::to_string(content) + "x" +
                         std::to_string(bb.token_dim) + " tokens");
  }
  Tensor input({batch * content, bb.token_dim}, std::vector<double>(tokens.begin(), tokens.end()));
  Tensor emb = linear(input, embed_w_, embed_b_);

  // Row 0 of `stacked` is the class token, rows 1.. are the embedded content tokens.
  const Tensor parts[] = {cls_token_, emb};
  Tensor stacked = concat_rows(parts);
  std::vector<std::size_t> order(batch * seq), pos_rows(batch * seq), cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    order[b * seq] = 0;
    for (std::size_t t = 1; t < seq; ++t) order[b * seq + t] = 1 + b * content + (t - 1);
    for (std::size_t t = 0; t < seq; ++t) pos_rows[b * seq + t] = t;
    cls_rows[b] = b * seq;
  }
  Tensor x = add(select_rows(stacked, order), select_rows(pos_embed_, pos_rows));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = block_forward(blocks_[i], adapter(i), config_.adapter, x, batch, seq, bb.num_heads, ctx);
  }
  return layer_norm(select_rows(x, cls_rows), norm_gamma_, norm_beta_);
}

Tensor GcdModel::project(const Tensor& h) const {
  Tensor z = h;
  for (std::size_t l = 0; l < proj_w_.size(); ++l) {
    z = linear(z, proj_w_[l], proj_b_[l]);
    if (l + 1 < proj_w_.size()) z = apply(Activation::gelu(), z);
  }
  return l2_normalize(z);
}

bool GcdModel::is_adapted(std::size_t block) const {
  return block < adapters_.size() && adapters_[block].w_up.defined();
}

const AdapterBranch* GcdModel::adapter(std::size_t block) const {
  return is_adapted(block) ? &adapters_[block] : nullptr;
}

std::vector<Tensor> GcdModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params_)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

void GcdModel::set_phase(TrainingPhase phase) {
  for (auto& [name, t] : params_) {
    const ParameterGroup g = parameter_group(name);
    bool trainable = false;
    switch (phase) {
      case TrainingPhase::Frozen: break;
      case TrainingPhase::Pretrain:
        trainable = g == ParameterGroup::Backbone || (g == ParameterGroup::Head && name != "head.prototypes");
        break;
      case TrainingPhase::Finetune: trainable = g != ParameterGroup::Backbone; break;
    }
    t.set_requires_grad(trainable);
    t.zero_grad();
  }
}

ParameterSet GcdModel::snapshot() const {
  ParameterSet out;
  for (const auto& [name, t] : params_) {
    out.emplace(name, StoredParameter{t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return out;
}

std::size_t GcdModel::load(const ParameterSet& params, std::span<const ParameterGroup> groups) {
  std::size_t copied = 0;
  for (const auto& [name, stored] : params) {
    if (std::find(groups.begin(), groups.end(), parameter_group(name)) == groups.end()) continue;
    auto it = params_.find(name);
    if (it == params_.end()) continue;
    if (it->second.shape() != stored.shape) {
      throw DimensionError("parameter " + name + ": stored " + shape_str(stored.shape) + " vs model " +
                           shape_str(it->second.shape()));
    }
    std::copy(stored.data.begin(), stored.data.end(), it->second.mutable_data().begin());
    ++copied;
  }
  return copied;
}

std::size_t GcdModel::load(const ParameterSet& params) {
  const ParameterGroup all[] = {ParameterGroup::Backbone, ParameterGroup::Adapter, ParameterGroup::Head};
  return load(params, all);
}

std::uint64_t parameter_digest(const GcdModel& model, std::span<const ParameterGroup> groups) {
  std::uint64_t h = detail::kFnvOffset;
  for (const auto& [name, t] : model.named_parameters()) {
    if (std::find(groups.begin(), groups.end(), parameter_group(name)) == groups.end()) continue;
    h = detail::fnv1a(name, h);
    const auto data = t.data();
    h = detail::fnv1a(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double)), h);
  }
  return h;
}

}  // namespace lagcd
