// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "lagcd/checkpoint.hpp"
#include "lagcd/config.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/sweep.hpp"
#include "test_util.hpp"

using namespace lagcd;
using namespace lagcd::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "lagcd_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.data = tiny_spec();
  cfg.model = tiny_model();
  cfg.pretrain.epochs = 1;
  cfg.pretrain.batch_size = 8;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;
  return cfg;
}

}  // namespace

TEST(RunConfig, DefaultsValidateAndRoundTrip) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const std::string text = to_json(cfg);
  EXPECT_EQ(to_json(run_config_from_json(text)), text);
}

TEST(RunConfig, EditedFieldsSurviveRoundTrip) {
  RunConfig cfg = tiny_run();
  cfg.model.adapter.activation = Activation::leaky_relu(0.25);
  cfg.train.weights.s_d = 0.3;
  cfg.train.logit_da = true;
  cfg.train.grad_clip = 2.5;
  cfg.pretrain.grad_clip = 0.5;
  cfg.train.contrastive_mode = ContrastiveMode::AsWritten;
  const RunConfig back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(back.model.adapter.activation.to_string(), "leaky_relu:0.25");
  EXPECT_DOUBLE_EQ(back.train.weights.s_d, 0.3);
  EXPECT_TRUE(back.train.logit_da);
  EXPECT_DOUBLE_EQ(back.train.grad_clip, 2.5);
  EXPECT_DOUBLE_EQ(back.pretrain.grad_clip, 0.5);
  EXPECT_EQ(back.train.contrastive_mode, ContrastiveMode::AsWritten);
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(RunConfig, PartialDocumentKeepsDefaults) {
  const RunConfig cfg = run_config_from_json(R"({"train": {"epochs": 7, "warmup_epochs": 3}})");
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.train.warmup_epochs, 3u);
  EXPECT_EQ(cfg.train.batch_size, TrainConfig::toy().batch_size);
}

TEST(RunConfig, RejectsUnknownKeysBadTypesAndInconsistency) {
  EXPECT_THROW(run_config_from_json(R"({"trian": {}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {"epochs": "many"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json("{not json"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"data": {"num_classes": 12}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"labeled_fraction": 1.0})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {"warmup_epochs": 500}})"), ConfigError);
}

TEST(RunConfig, FileRoundTripAndMissingFile) {
  const auto path = scratch("cfg.json");
  const RunConfig cfg = tiny_run();
  write_file(path, to_json(cfg));
  EXPECT_EQ(to_json(load_run_config(path)), to_json(cfg));
  EXPECT_THROW(load_run_config(scratch("absent.json")), IoError);
}

TEST(RunConfig, BuildDatasetMatchesSpec) {
  const RunConfig cfg = tiny_run();
  const DatasetBundle b = build_dataset(cfg);
  EXPECT_EQ(b.dataset.size(), cfg.data.num_classes * cfg.data.samples_per_class);
  EXPECT_EQ(b.split.num_classes, cfg.data.num_classes);
  EXPECT_EQ(b.split.labeled.size() + b.split.unlabeled.size(), b.dataset.size());
}

TEST(Checkpoint, EncodeDecodeRestoresBitExactModel) {
  GcdModel model(tiny_model(), 13);
  randomize_adapters(model, 14);
  const Checkpoint ckpt = make_checkpoint(model, "final", 9);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ckpt));
  EXPECT_EQ(back.seed, 13u);
  EXPECT_EQ(back.epoch, 9u);
  EXPECT_EQ(back.stage, "final");
  EXPECT_EQ(back.params, model.snapshot());
  const GcdModel restored = restore_model(back);
  EXPECT_EQ(restored.snapshot(), model.snapshot());
  EXPECT_EQ(restored.config().adapter.activation.to_string(), model.config().adapter.activation.to_string());
}

TEST(Checkpoint, FileRoundTrip) {
  GcdModel model(tiny_model(), 3);
  const auto path = scratch("m.ckpt");
  save_checkpoint(path, make_checkpoint(model, "pretrain", 0));
  EXPECT_EQ(load_checkpoint(path).params, model.snapshot());
  EXPECT_THROW(load_checkpoint(scratch("absent.ckpt")), IoError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  GcdModel model(tiny_model(), 3);
  const std::string bytes = encode_checkpoint(make_checkpoint(model, "final", 1));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  EXPECT_THROW(decode_checkpoint(""), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), FormatError);
}

TEST(Sweep, AxisParsingAndApplication) {
  for (auto axis : {SweepAxis::Activation, SweepAxis::AdapterScale, SweepAxis::Bottleneck, SweepAxis::AdaptedBlocks,
                    SweepAxis::AlignmentScale}) {
    EXPECT_EQ(parse_sweep_axis(to_string(axis)), axis);
  }
  EXPECT_THROW(parse_sweep_axis("depth"), ConfigError);
  const RunConfig base = tiny_run();
  EXPECT_EQ(apply_axis(base, SweepAxis::Activation, "elu:2", 4).model.adapter.activation.to_string(), "elu:2");
  EXPECT_EQ(apply_axis(base, SweepAxis::Activation, "elu:2", 4).train.seed, 4u);
  EXPECT_DOUBLE_EQ(apply_axis(base, SweepAxis::AdapterScale, "0.3", 0).model.adapter.scale, 0.3);
  EXPECT_EQ(apply_axis(base, SweepAxis::Bottleneck, "5", 0).model.adapter.bottleneck_dim, 5u);
  EXPECT_EQ(apply_axis(base, SweepAxis::AdaptedBlocks, "0", 0).model.adapter.adapted_blocks, 0u);
  EXPECT_DOUBLE_EQ(apply_axis(base, SweepAxis::AlignmentScale, "0.4", 0).train.weights.s_d, 0.4);
  EXPECT_THROW(apply_axis(base, SweepAxis::Bottleneck, "2.5", 0), ConfigError);
  EXPECT_THROW(apply_axis(base, SweepAxis::AdapterScale, "big", 0), ConfigError);
  EXPECT_THROW(apply_axis(base, SweepAxis::AdaptedBlocks, "9", 0), ConfigError);
  EXPECT_THROW(apply_axis(base, SweepAxis::Activation, "softplus", 0), ConfigError);
}

TEST(Sweep, LoadSpecWithRelativeBaseConfig) {
  write_file(scratch("base.json"), to_json(tiny_run()));
  write_file(scratch("sweep.json"), R"({"axis": "s_a", "values": [0.1, "0.2"], "seeds": [0, 1], "base_config": "base.json"})");
  const SweepSpec spec = load_sweep_spec(scratch("sweep.json"));
  EXPECT_EQ(spec.axis, SweepAxis::AdapterScale);
  EXPECT_EQ(spec.values, (std::vector<std::string>{"0.1", "0.2"}));
  EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(to_json(spec.base), to_json(tiny_run()));
  write_file(scratch("empty.json"), R"({"axis": "s_a", "values": [], "seeds": [0]})");
  EXPECT_THROW(load_sweep_spec(scratch("empty.json")), ConfigError);
}

TEST(Sweep, RowsOrderedAndIndependentOfWorkerCount) {
  SweepSpec spec;
  spec.axis = SweepAxis::Activation;
  spec.values = {"linear", "relu"};
  spec.seeds = {0, 1};
  spec.base = tiny_run();
  const DatasetBundle data = build_dataset(spec.base);
  const ParameterSet pre = pretrain_backbone(spec.base.model, data.dataset, spec.base.pretrain);
  std::vector<std::string> streamed;
  const auto serial = run_sweep(spec, data, pre, 1, [&](const SweepRow& r) {
    streamed.push_back(r.axis_value + "/" + std::to_string(r.seed));
  });
  EXPECT_EQ(streamed, (std::vector<std::string>{"linear/0", "linear/1", "relu/0", "relu/1"}));
  const auto parallel = run_sweep(spec, data, pre, 3);
  EXPECT_EQ(sweep_csv(spec.axis, serial), sweep_csv(spec.axis, parallel));
  const std::string csv = sweep_csv(spec.axis, serial);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "axis,axis_value,seed,acc_all,acc_seen,acc_novel,sparsity,similarity,predicted_seen_ratio");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const SweepRow one = run_one(apply_axis(spec.base, spec.axis, "relu", 1), data, pre, "relu");
  EXPECT_DOUBLE_EQ(one.acc_all, serial[3].acc_all);
  EXPECT_DOUBLE_EQ(one.similarity, serial[3].similarity);
}
