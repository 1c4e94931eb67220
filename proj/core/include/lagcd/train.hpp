// SPDX-License-Identifier: Apache-2.0
//
// Schedules, the SGD optimizer, toy backbone pretraining and the adapter
// fine-tuning loop with warm-up controlled distribution alignment.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lagcd/data.hpp"
#include "lagcd/losses.hpp"
#include "lagcd/model.hpp"

namespace lagcd {

struct TrainConfig {
  double lr0 = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::size_t warmup_epochs = 30;
  double teacher_temp_start = 0.07;
  double teacher_temp_end = 0.04;
  std::size_t teacher_temp_epochs = 30;
  LossWeights weights;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  /// Rescale the trainable gradient to this global L2 norm when larger (0 disables).
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
  bool da_enabled = true;
  bool logit_da = false;
  ContrastiveMode contrastive_mode = ContrastiveMode::Standard;
  AugmentConfig augment;
  /// Write a checkpoint every k epochs (0 disables periodic checkpoints).
  std::size_t checkpoint_every = 0;

  /// Desk-scale run: B = 32, 60 epochs, 10 warm-up epochs.
  static TrainConfig toy();
  void validate() const;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi e / E)) / 2 with lr_min = lr0 / 1000.
double cosine_lr(std::size_t epoch, const TrainConfig& cfg);
/// Cosine from teacher_temp_start to teacher_temp_end over teacher_temp_epochs, then constant.
double teacher_temp(std::size_t epoch, const TrainConfig& cfg);

/// Classical momentum with L2 on the listed parameters only:
/// v <- mu v + g;  p <- p - lr v - lr wd p.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay);

  /// Parameters without a gradient buffer are treated as g = 0.
  void step(double lr);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Rescales all gradients so their joint l2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

struct PretrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr0 = 0.1;
  double temperature = 0.2;
  double grad_clip = 1.0;  // 0 disables
  double momentum = 0.9;
  double weight_decay = 5e-5;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// Trains backbone and projection head on every sample with the self-supervised
/// contrastive loss and returns the full parameter set; adapters are excluded.
ParameterSet pretrain_backbone(const ModelConfig& model_cfg, const Dataset& dataset, const PretrainConfig& cfg,
                               std::vector<PretrainEpoch>* log = nullptr);

/// Fresh model (adapters at their zero-initialized state, seeded by `seed`)
/// with backbone and head copied from `pretrained`, in the fine-tuning phase.
GcdModel make_finetune_model(const ModelConfig& model_cfg, const ParameterSet& pretrained, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double teacher_temp = 0.0;
  double loss_total = 0.0;
  double loss_rep_unsup = 0.0;
  double loss_rep_sup = 0.0;
  double loss_cls_unsup = 0.0;
  double loss_cls_sup = 0.0;
  double acc_all = 0.0;
  double acc_seen = 0.0;
  double acc_novel = 0.0;
  double predicted_seen_ratio = 0.0;
  double adapter_sparsity = 0.0;
  double feature_similarity = 0.0;
  bool da_active = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);
std::string metrics_csv(const std::vector<EpochMetrics>& rows);

struct TrainHooks {
  /// Directory for periodic and warm-up checkpoints; empty disables them.
  std::filesystem::path checkpoint_dir;
  /// Called after every epoch with the row just logged.
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct RunResult {
  std::vector<EpochMetrics> metrics;
  std::vector<double> pi;  // alignment vector in force at the end (empty if never estimated)
  std::size_t pi_estimations = 0;
  std::size_t steps = 0;
};

/// Fine-tunes adapters, projection head and prototypes of `model` on the split.
/// The backbone must already be frozen (TrainingPhase::Finetune).
RunResult train_run(GcdModel& model, const Dataset& dataset, const GcdSplit& split, const TrainConfig& cfg,
                    const TrainHooks& hooks = {});

}  // namespace lagcd
