// SPDX-License-Identifier: Apache-2.0
#include "lagcd/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "lagcd/checkpoint.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/eval.hpp"
#include "rng.hpp"

namespace lagcd {

namespace {

double cosine_decay(std::size_t epoch, std::size_t epochs, double lr0) {
  const double lr_min = lr0 / 1000.0;
  const double t = epochs == 0 ? 1.0 : static_cast<double>(epoch) / static_cast<double>(epochs);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace

TrainConfig TrainConfig::toy() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 60;
  cfg.warmup_epochs = 30;
  cfg.grad_clip = 1.0;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be finite and >= 0");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (warmup_epochs > epochs) throw ConfigError("warmup_epochs must not exceed epochs");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and at least 2");
  if (!(teacher_temp_start > 0.0 && teacher_temp_end > 0.0)) throw ConfigError("teacher temperatures must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be finite and >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  weights.validate();
  augment.validate();
}

double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch > cfg.epochs) throw PreconditionError("cosine_lr: epoch beyond the schedule");
  return cosine_decay(epoch, cfg.epochs, cfg.lr0);
}

double teacher_temp(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.teacher_temp_epochs) return cfg.teacher_temp_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.teacher_temp_epochs);
  return cfg.teacher_temp_end +
         0.5 * (cfg.teacher_temp_start - cfg.teacher_temp_end) * (1.0 + std::cos(std::numbers::pi * t));
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto& v = velocity_[i];
    const bool has = p.has_grad();
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + (has ? g[j] : 0.0);
      w[j] = w[j] - lr * v[j] - lr * weight_decay_ * w[j];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.impl()->grad) g *= f;
    }
  }
  return norm;
}

void PretrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("pretrain batch_size must be at least 2");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("pretrain lr0 must be finite and >= 0");
  if (!(temperature > 0.0)) throw ConfigError("pretrain temperature must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("pretrain grad_clip must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("pretrain momentum must lie in [0, 1)");
  augment.validate();
}

ParameterSet pretrain_backbone(const ModelConfig& model_cfg, const Dataset& dataset, const PretrainConfig& cfg,
                               std::vector<PretrainEpoch>* log) {
  cfg.validate();
  ModelConfig mcfg = model_cfg;
  mcfg.adapter.adapted_blocks = 0;
  GcdModel model(mcfg, cfg.seed);
  model.set_phase(TrainingPhase::Pretrain);
  SgdMomentum opt(model.trainable_parameters(), cfg.momentum, cfg.weight_decay);
  auto order_rng = detail::stream(cfg.seed, "pretrain-order");
  auto view_rng = detail::stream(cfg.seed, "pretrain-views");

  std::vector<std::size_t> ids(dataset.size());
  std::iota(ids.begin(), ids.end(), 0);
  const std::size_t dim = dataset.spec.sample_size();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_decay(e, cfg.epochs, cfg.lr0);
    std::shuffle(ids.begin(), ids.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= ids.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, ids.size() - start);
      std::vector<double> tokens(2 * b * dim);
      for (std::size_t i = 0; i < b; ++i) {
        auto [v1, v2] = two_views(dataset.sample(ids[start + i]), dataset.spec.token_dim, cfg.augment, view_rng);
        std::copy(v1.begin(), v1.end(), tokens.begin() + static_cast<long>(i * dim));
        std::copy(v2.begin(), v2.end(), tokens.begin() + static_cast<long>((b + i) * dim));
      }
      Tape tape;
      Tape::Scope scope(tape);
      ForwardContext ctx;
      Tensor z = model.project(model.features(tokens, 2 * b, ctx));
      std::vector<std::size_t> first(b), second(b);
      std::iota(first.begin(), first.end(), 0);
      std::iota(second.begin(), second.end(), b);
      Tensor loss =
          self_sup_contrastive(select_rows(z, first), select_rows(z, second), cfg.temperature, ContrastiveMode::Standard);
      if (!std::isfinite(loss.item())) {
        throw TrainingError(fmt::format("pretraining loss is not finite at epoch {} batch {}", e, batches));
      }
      tape.backward(loss);
      clip_grad_norm(opt.params(), cfg.grad_clip);
      opt.step(lr);
      opt.zero_grad();
      loss_sum += loss.item();
      ++batches;
    }
    if (log != nullptr) log->push_back({e, lr, batches ? loss_sum / static_cast<double>(batches) : 0.0});
  }
  return model.snapshot();
}

GcdModel make_finetune_model(const ModelConfig& model_cfg, const ParameterSet& pretrained, std::uint64_t seed) {
  GcdModel model(model_cfg, seed);
  for (const auto& [name, t] : model.named_parameters()) {
    if (parameter_group(name) != ParameterGroup::Adapter && !pretrained.count(name)) {
      throw ConfigError("pretrained parameters lack " + name);
    }
  }
  const ParameterGroup groups[] = {ParameterGroup::Backbone, ParameterGroup::Head};
  model.load(pretrained, groups);
  model.set_phase(TrainingPhase::Finetune);
  return model;
}

std::string metrics_csv_header() {
  return "epoch,lr,teacher_temp,loss_total,loss_rep_unsup,loss_rep_sup,loss_cls_unsup,loss_cls_sup,"
         "acc_all,acc_seen,acc_novel,predicted_seen_ratio,adapter_sparsity,feature_similarity,da_active\n";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", m.epoch, m.lr, m.teacher_temp, m.loss_total,
                     m.loss_rep_unsup, m.loss_rep_sup, m.loss_cls_unsup, m.loss_cls_sup, m.acc_all, m.acc_seen,
                     m.acc_novel, m.predicted_seen_ratio, m.adapter_sparsity, m.feature_similarity,
                     m.da_active ? 1 : 0);
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = metrics_csv_header();
  for (const auto& r : rows) out += metrics_csv_row(r);
  return out;
}

RunResult train_run(GcdModel& model, const Dataset& dataset, const GcdSplit& split, const TrainConfig& cfg,
                    const TrainHooks& hooks) {
  cfg.validate();
  const auto& mc = model.config();
  if (mc.backbone.token_dim != dataset.spec.token_dim || mc.backbone.content_tokens() != dataset.spec.token_len) {
    throw ConfigError("model token layout does not match the dataset");
  }
  if (mc.head.num_classes != split.num_classes || split.truth.size() != dataset.size()) {
    throw ConfigError("model classes or split do not match the dataset");
  }
  for (const auto& [name, t] : model.named_parameters()) {
    if (parameter_group(name) == ParameterGroup::Backbone && t.requires_grad()) {
      throw PreconditionError("train_run: backbone parameter " + name + " is not frozen");
    }
  }

  SgdMomentum opt(model.trainable_parameters(), cfg.momentum, cfg.weight_decay);
  auto sampler_rng = detail::stream(cfg.seed, "sampler");
  auto augment_rng = detail::stream(cfg.seed, "augment");
  auto dropout_rng = detail::stream(cfg.seed, "dropout");
  if (!hooks.checkpoint_dir.empty()) std::filesystem::create_directories(hooks.checkpoint_dir);
  const auto save = [&](const std::string& file, const std::string& stage, std::size_t epoch) {
    if (hooks.checkpoint_dir.empty()) return;
    save_checkpoint(hooks.checkpoint_dir / file, make_checkpoint(model, stage, epoch));
  };

  const Tensor reference = dataset_features(model, dataset);
  const LossWeights& w = cfg.weights;
  RunResult result;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (cfg.da_enabled && e == cfg.warmup_epochs) {
      const auto pi_v = estimate_pi_v(model, dataset, w.tau_s);
      result.pi = alignment_vector(pi_v, uniform_prior(split.num_classes), w.s_d);
      ++result.pi_estimations;
      save("warmup.ckpt", "warmup", e);
    }
    EpochMetrics m;
    m.epoch = e;
    m.lr = cosine_lr(e, cfg);
    m.teacher_temp = teacher_temp(e, cfg);
    m.da_active = !result.pi.empty();
    LossOptions options{cfg.contrastive_mode, m.teacher_temp, cfg.logit_da};

    const auto epoch = balanced_epoch(split, cfg.batch_size, sampler_rng);
    for (std::size_t bi = 0; bi < epoch.size(); ++bi) {
      const Batch batch = make_batch(dataset, epoch[bi], cfg.augment, augment_rng);
      Tape tape;
      Tape::Scope scope(tape);
      ForwardContext ctx{true, &dropout_rng, nullptr};
      const LossBreakdown loss = total_loss(model, batch, w, result.pi, options, ctx);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        throw TrainingError(fmt::format("loss is not finite at epoch {} batch {} (rep_u={}, rep_s={}, cls_u={}, cls_s={})",
                                        e, bi, loss.rep_unsup, loss.rep_sup, loss.cls_unsup, loss.cls_sup));
      }
      tape.backward(loss.total);
      clip_grad_norm(opt.params(), cfg.grad_clip);
      opt.step(m.lr);
      opt.zero_grad();
      ++result.steps;
      m.loss_total += value;
      m.loss_rep_unsup += loss.rep_unsup;
      m.loss_rep_sup += loss.rep_sup;
      m.loss_cls_unsup += loss.cls_unsup;
      m.loss_cls_sup += loss.cls_sup;
    }
    const double nb = static_cast<double>(epoch.size());
    m.loss_total /= nb;
    m.loss_rep_unsup /= nb;
    m.loss_rep_sup /= nb;
    m.loss_cls_unsup /= nb;
    m.loss_cls_sup /= nb;

    SparsityProbe probe;
    const Tensor feats = dataset_features(model, dataset, {}, &probe);
    const auto pred = predict_classes(model, feats);
    std::vector<std::size_t> pred_u;
    pred_u.reserve(split.unlabeled.size());
    for (std::size_t id : split.unlabeled) pred_u.push_back(pred[id]);
    const EvalReport report = gcd_accuracy(pred_u, split);
    m.acc_all = report.acc_all;
    m.acc_seen = report.acc_seen;
    m.acc_novel = report.acc_novel;
    m.predicted_seen_ratio = bias_report(pred, split).predicted_seen_ratio;
    m.adapter_sparsity = probe.fraction();
    m.feature_similarity = mean_cosine(reference, feats);
    result.metrics.push_back(m);

    if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) {
      save(fmt::format("epoch_{:04d}.ckpt", e + 1), "epoch", e + 1);
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return result;
}

}  // namespace lagcd
