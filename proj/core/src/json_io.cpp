// SPDX-License-Identifier: Apache-2.0
#include "json_io.hpp"

namespace lagcd::detail {

ObjectReader::ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
  if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
}

const json* ObjectReader::child(const char* key) {
  seen_.insert(key);
  auto it = j_.find(key);
  return it == j_.end() ? nullptr : &*it;
}

void ObjectReader::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (!seen_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
  }
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

json to_json_value(const SyntheticSpec& v) {
  return {{"num_classes", v.num_classes},
          {"num_seen", v.num_seen},
          {"samples_per_class", v.samples_per_class},
          {"token_len", v.token_len},
          {"token_dim", v.token_dim},
          {"class_separation", v.class_separation},
          {"noise_sigma", v.noise_sigma},
          {"prototype_spread", v.prototype_spread},
          {"seed", v.seed}};
}

void read_json(const json& j, SyntheticSpec& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("num_classes", v.num_classes);
  r.get("num_seen", v.num_seen);
  r.get("samples_per_class", v.samples_per_class);
  r.get("token_len", v.token_len);
  r.get("token_dim", v.token_dim);
  r.get("class_separation", v.class_separation);
  r.get("noise_sigma", v.noise_sigma);
  r.get("prototype_spread", v.prototype_spread);
  r.get("seed", v.seed);
  r.finish();
}

json to_json_value(const BackboneConfig& v) {
  return {{"token_dim", v.token_dim}, {"embed_dim", v.embed_dim},   {"num_blocks", v.num_blocks},
          {"num_heads", v.num_heads}, {"mlp_hidden", v.mlp_hidden}, {"seq_len", v.seq_len}};
}

void read_json(const json& j, BackboneConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("token_dim", v.token_dim);
  r.get("embed_dim", v.embed_dim);
  r.get("num_blocks", v.num_blocks);
  r.get("num_heads", v.num_heads);
  r.get("mlp_hidden", v.mlp_hidden);
  r.get("seq_len", v.seq_len);
  r.finish();
}

json to_json_value(const AdapterConfig& v) {
  return {{"bottleneck_dim", v.bottleneck_dim},
          {"scale", v.scale},
          {"activation", v.activation.to_string()},
          {"adapted_blocks", v.adapted_blocks},
          {"dropout", v.dropout}};
}

void read_json(const json& j, AdapterConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("bottleneck_dim", v.bottleneck_dim);
  r.get("scale", v.scale);
  std::string act = v.activation.to_string();
  r.get("activation", act);
  v.activation = Activation::parse(act);
  r.get("adapted_blocks", v.adapted_blocks);
  r.get("dropout", v.dropout);
  r.finish();
}

json to_json_value(const HeadConfig& v) { return {{"proj_dim", v.proj_dim}, {"num_classes", v.num_classes}}; }

void read_json(const json& j, HeadConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("proj_dim", v.proj_dim);
  r.get("num_classes", v.num_classes);
  r.finish();
}

json to_json_value(const ModelConfig& v) {
  return {{"backbone", to_json_value(v.backbone)},
          {"adapter", to_json_value(v.adapter)},
          {"head", to_json_value(v.head)}};
}

void read_json(const json& j, ModelConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  if (const json* c = r.child("backbone")) read_json(*c, v.backbone, context + ".backbone");
  if (const json* c = r.child("adapter")) read_json(*c, v.adapter, context + ".adapter");
  if (const json* c = r.child("head")) read_json(*c, v.head, context + ".head");
  r.finish();
}

json to_json_value(const LossWeights& v) {
  return {{"lambda_sup", v.lambda_sup}, {"lambda_ent", v.lambda_ent}, {"tau_u", v.tau_u},
          {"tau_c", v.tau_c},           {"tau_s", v.tau_s},           {"s_d", v.s_d}};
}

void read_json(const json& j, LossWeights& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("lambda_sup", v.lambda_sup);
  r.get("lambda_ent", v.lambda_ent);
  r.get("tau_u", v.tau_u);
  r.get("tau_c", v.tau_c);
  r.get("tau_s", v.tau_s);
  r.get("s_d", v.s_d);
  r.finish();
}

json to_json_value(const AugmentConfig& v) {
  return {{"jitter_sigma", v.jitter_sigma}, {"token_drop", v.token_drop}};
}

void read_json(const json& j, AugmentConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("jitter_sigma", v.jitter_sigma);
  r.get("token_drop", v.token_drop);
  r.finish();
}

json to_json_value(const TrainConfig& v) {
  return {{"lr0", v.lr0},
          {"epochs", v.epochs},
          {"batch_size", v.batch_size},
          {"warmup_epochs", v.warmup_epochs},
          {"teacher_temp_start", v.teacher_temp_start},
          {"teacher_temp_end", v.teacher_temp_end},
          {"teacher_temp_epochs", v.teacher_temp_epochs},
          {"weights", to_json_value(v.weights)},
          {"momentum", v.momentum},
          {"weight_decay", v.weight_decay},
          {"seed", v.seed},
          {"da_enabled", v.da_enabled},
          {"logit_da", v.logit_da},
          {"grad_clip", v.grad_clip},
          {"contrastive_mode", to_string(v.contrastive_mode)},
          {"augment", to_json_value(v.augment)},
          {"checkpoint_every", v.checkpoint_every}};
}

void read_json(const json& j, TrainConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("lr0", v.lr0);
  r.get("epochs", v.epochs);
  r.get("batch_size", v.batch_size);
  r.get("warmup_epochs", v.warmup_epochs);
  r.get("teacher_temp_start", v.teacher_temp_start);
  r.get("teacher_temp_end", v.teacher_temp_end);
  r.get("teacher_temp_epochs", v.teacher_temp_epochs);
  if (const json* c = r.child("weights")) read_json(*c, v.weights, context + ".weights");
  r.get("momentum", v.momentum);
  r.get("weight_decay", v.weight_decay);
  r.get("seed", v.seed);
  r.get("da_enabled", v.da_enabled);
  r.get("logit_da", v.logit_da);
  r.get("grad_clip", v.grad_clip);
  std::string mode = to_string(v.contrastive_mode);
  r.get("contrastive_mode", mode);
  v.contrastive_mode = parse_contrastive_mode(mode);
  if (const json* c = r.child("augment")) read_json(*c, v.augment, context + ".augment");
  r.get("checkpoint_every", v.checkpoint_every);
  r.finish();
}

json to_json_value(const PretrainConfig& v) {
  return {{"epochs", v.epochs},
          {"batch_size", v.batch_size},
          {"lr0", v.lr0},
          {"temperature", v.temperature},
          {"grad_clip", v.grad_clip},
          {"momentum", v.momentum},
          {"weight_decay", v.weight_decay},
          {"augment", to_json_value(v.augment)},
          {"seed", v.seed}};
}

void read_json(const json& j, PretrainConfig& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("epochs", v.epochs);
  r.get("batch_size", v.batch_size);
  r.get("lr0", v.lr0);
  r.get("temperature", v.temperature);
  r.get("grad_clip", v.grad_clip);
  r.get("momentum", v.momentum);
  r.get("weight_decay", v.weight_decay);
  if (const json* c = r.child("augment")) read_json(*c, v.augment, context + ".augment");
  r.get("seed", v.seed);
  r.finish();
}

json to_json_value(const GcdSplit& v) {
  return {{"num_classes", v.num_classes}, {"seen_classes", v.seen_classes}, {"novel_classes", v.novel_classes},
          {"labeled", v.labeled},         {"unlabeled", v.unlabeled},       {"truth", v.truth}};
}

void read_json(const json& j, GcdSplit& v, const std::string& context) {
  ObjectReader r(j, context);
  r.get("num_classes", v.num_classes);
  r.get("seen_classes", v.seen_classes);
  r.get("novel_classes", v.novel_classes);
  r.get("labeled", v.labeled);
  r.get("unlabeled", v.unlabeled);
  r.get("truth", v.truth);
  r.finish();
}

}  // namespace lagcd::detail
