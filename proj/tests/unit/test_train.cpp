// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "lagcd/checkpoint.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/train.hpp"
#include "test_util.hpp"

using namespace lagcd;
using namespace lagcd::testing;

namespace {

TrainConfig tiny_train() {
  TrainConfig cfg = TrainConfig::toy();
  cfg.batch_size = 8;
  cfg.epochs = 4;
  cfg.warmup_epochs = 2;
  return cfg;
}

struct Fixture {
  Dataset ds = generate(tiny_spec());
  GcdSplit split = make_split(ds, 2, 0.5, 0);
  ParameterSet pretrained;

  Fixture() {
    PretrainConfig pc;
    pc.epochs = 2;
    pc.batch_size = 8;
    pretrained = pretrain_backbone(tiny_model(), ds, pc);
  }
  GcdModel model(std::uint64_t seed = 0) const { return make_finetune_model(tiny_model(), pretrained, seed); }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Schedule, CosineLrEndpointsAndMidpoint) {
  TrainConfig cfg;
  cfg.lr0 = 0.1;
  cfg.epochs = 200;
  EXPECT_NEAR(cosine_lr(0, cfg), 0.1, 1e-12);
  EXPECT_NEAR(cosine_lr(200, cfg), 0.1 / 1000, 1e-12);
  EXPECT_NEAR(cosine_lr(100, cfg), (0.1 + 0.0001) / 2, 1e-12);
  EXPECT_THROW(cosine_lr(201, cfg), PreconditionError);
}

TEST(Schedule, TeacherTemperature) {
  TrainConfig cfg;
  EXPECT_NEAR(teacher_temp(0, cfg), 0.07, 1e-12);
  EXPECT_NEAR(teacher_temp(15, cfg), 0.055, 1e-12);
  for (std::size_t e = 30; e < 300; e += 7) EXPECT_NEAR(teacher_temp(e, cfg), 0.04, 1e-12);
  for (std::size_t e = 1; e <= 30; ++e) EXPECT_LE(teacher_temp(e, cfg), teacher_temp(e - 1, cfg));
}

TEST(Sgd, VanillaStepAndZeroGradient) {
  Tensor p({2}, {1.0, -2.0}, true);
  {
    Tape tape;
    Tape::Scope s(tape);
    tape.backward(sum(mul(p, Tensor({2}, {3.0, 4.0}))));
  }
  SgdMomentum opt({p}, 0.0, 0.0);
  opt.step(0.1);
  EXPECT_DOUBLE_EQ(p.data()[0], 1.0 - 0.3);
  EXPECT_DOUBLE_EQ(p.data()[1], -2.0 - 0.4);
  opt.zero_grad();
  const std::vector<double> before(p.data().begin(), p.data().end());
  opt.step(0.1);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), before);
}

TEST(Sgd, MomentumRecurrenceByHand) {
  Tensor p({1}, {1.0}, true);
  SgdMomentum opt({p}, 0.9, 0.01);
  double v = 0.0, x = 1.0;
  for (int step = 0; step < 2; ++step) {
    opt.zero_grad();
    {
      Tape tape;
      Tape::Scope s(tape);
      tape.backward(mul(p, p));
    }
    const double g = 2.0 * x;
    v = 0.9 * v + g;
    x = x - 0.05 * v - 0.05 * 0.01 * x;
    opt.step(0.05);
    EXPECT_DOUBLE_EQ(p.data()[0], x);
  }
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  Tensor p({2}, {0.0, 0.0}, true);
  {
    Tape tape;
    Tape::Scope s(tape);
    tape.backward(sum(mul(p, Tensor({2}, {3.0, 4.0}))));
  }
  const Tensor params[] = {p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(p.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-15);
}

TEST(Pretrain, ReturnsBackboneAndHeadWithoutAdapters) {
  const auto& f = fixture();
  for (const auto& [name, p] : f.pretrained) EXPECT_NE(parameter_group(name), ParameterGroup::Adapter) << name;
  GcdModel fresh(tiny_model(), 0);
  const ParameterGroup bb[] = {ParameterGroup::Backbone};
  GcdModel tuned = f.model();
  EXPECT_NE(parameter_digest(fresh, bb), parameter_digest(tuned, bb));
}

TEST(Pretrain, Deterministic) {
  const auto& f = fixture();
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch_size = 8;
  std::vector<PretrainEpoch> log;
  EXPECT_EQ(pretrain_backbone(tiny_model(), f.ds, pc, &log), f.pretrained);
  ASSERT_EQ(log.size(), 2u);
  EXPECT_TRUE(std::isfinite(log[1].loss));
}

TEST(TrainRun, FrozenBackboneUntouchedAndOneRowPerEpoch) {
  const auto& f = fixture();
  GcdModel model = f.model();
  const ParameterGroup bb[] = {ParameterGroup::Backbone};
  const auto before = parameter_digest(model, bb);
  const auto r = train_run(model, f.ds, f.split, tiny_train());
  EXPECT_EQ(parameter_digest(model, bb), before);
  ASSERT_EQ(r.metrics.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& m = r.metrics[e];
    EXPECT_EQ(m.epoch, e);
    EXPECT_EQ(m.da_active, e >= 2);
    for (double v : {m.loss_total, m.acc_all, m.acc_seen, m.acc_novel, m.feature_similarity}) EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(m.loss_total,
                (1 - 0.35) * (m.loss_rep_unsup + m.loss_cls_unsup) + 0.35 * (m.loss_rep_sup + m.loss_cls_sup), 1e-12);
  }
  EXPECT_EQ(r.pi_estimations, 1u);
  EXPECT_EQ(r.pi.size(), 4u);
}

TEST(TrainRun, DeterministicCsv) {
  const auto& f = fixture();
  GcdModel a = f.model(), b = f.model();
  EXPECT_EQ(metrics_csv(train_run(a, f.ds, f.split, tiny_train()).metrics),
            metrics_csv(train_run(b, f.ds, f.split, tiny_train()).metrics));
  EXPECT_EQ(a.snapshot(), b.snapshot());
}

TEST(TrainRun, ZeroLearningRateKeepsParameters) {
  const auto& f = fixture();
  GcdModel model = f.model();
  const auto before = model.snapshot();
  TrainConfig cfg = tiny_train();
  cfg.lr0 = 0.0;
  train_run(model, f.ds, f.split, cfg);
  EXPECT_EQ(model.snapshot(), before);
}

TEST(TrainRun, DisabledAlignmentMatchesZeroStrength) {
  const auto& f = fixture();
  GcdModel a = f.model(), b = f.model();
  TrainConfig off = tiny_train();
  off.da_enabled = false;
  TrainConfig zero = tiny_train();
  zero.weights.s_d = 0.0;
  auto ra = train_run(a, f.ds, f.split, off);
  auto rb = train_run(b, f.ds, f.split, zero);
  EXPECT_EQ(ra.pi_estimations, 0u);
  for (auto* r : {&ra, &rb})
    for (auto& m : r->metrics) m.da_active = false;
  EXPECT_EQ(metrics_csv(ra.metrics), metrics_csv(rb.metrics));
}

TEST(TrainRun, FullWarmupNeverAligns) {
  const auto& f = fixture();
  GcdModel model = f.model();
  TrainConfig cfg = tiny_train();
  cfg.warmup_epochs = cfg.epochs;
  const auto r = train_run(model, f.ds, f.split, cfg);
  EXPECT_EQ(r.pi_estimations, 0u);
  for (const auto& m : r.metrics) EXPECT_FALSE(m.da_active);
}

TEST(TrainRun, RequiresFrozenBackbone) {
  const auto& f = fixture();
  GcdModel model = f.model();
  model.set_phase(TrainingPhase::Pretrain);
  EXPECT_THROW(train_run(model, f.ds, f.split, tiny_train()), PreconditionError);
}

TEST(TrainRun, NonFiniteLossAborts) {
  const auto& f = fixture();
  GcdModel model = f.model();
  TrainConfig cfg = tiny_train();
  cfg.lr0 = 1e200;
  EXPECT_THROW(train_run(model, f.ds, f.split, cfg), Error);
}

TEST(TrainRun, WritesWarmupAndPeriodicCheckpoints) {
  const auto& f = fixture();
  GcdModel model = f.model();
  TrainConfig cfg = tiny_train();
  cfg.checkpoint_every = 2;
  TrainHooks hooks;
  hooks.checkpoint_dir = std::filesystem::temp_directory_path() / "lagcd_test_ckpts";
  std::filesystem::remove_all(hooks.checkpoint_dir);
  std::size_t calls = 0;
  hooks.on_epoch = [&](const EpochMetrics&) { ++calls; };
  train_run(model, f.ds, f.split, cfg, hooks);
  EXPECT_EQ(calls, 4u);
  EXPECT_TRUE(std::filesystem::exists(hooks.checkpoint_dir / "warmup.ckpt"));
  const auto last = load_checkpoint(hooks.checkpoint_dir / "epoch_0004.ckpt");
  EXPECT_EQ(last.epoch, 4u);
  EXPECT_EQ(last.params, model.snapshot());
  std::filesystem::remove_all(hooks.checkpoint_dir);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.warmup_epochs = cfg.epochs + 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.weights.lambda_sup = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig::toy().validate());
}

TEST(MetricsCsv, HeaderColumns) {
  EXPECT_EQ(metrics_csv_header(),
            "epoch,lr,teacher_temp,loss_total,loss_rep_unsup,loss_rep_sup,loss_cls_unsup,loss_cls_sup,acc_all,"
            "acc_seen,acc_novel,predicted_seen_ratio,adapter_sparsity,feature_similarity,da_active\n");
}
