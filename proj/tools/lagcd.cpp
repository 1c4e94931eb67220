// SPDX-License-Identifier: Apache-2.0
// lagcd: data generation, pretraining, adapter training, evaluation, sweeps
// and analysis on synthetic GCD tasks.

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lagcd/checkpoint.hpp"
#include "lagcd/config.hpp"
#include "lagcd/data.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/eval.hpp"
#include "lagcd/sweep.hpp"
#include "lagcd/train.hpp"

namespace fs = std::filesystem;
using namespace lagcd;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string data;
  std::string backbone;
};

struct Overrides {
  std::string da;
  std::string logit_da;
  std::string activation;
  std::string contrastive_mode;
};

RunConfig load_config(const Common& c) {
  return c.config.empty() ? RunConfig{} : load_run_config(c.config);
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (!o.da.empty()) cfg.train.da_enabled = o.da == "on";
  if (!o.logit_da.empty()) cfg.train.logit_da = o.logit_da == "on";
  if (!o.activation.empty()) cfg.model.adapter.activation = Activation::parse(o.activation);
  if (!o.contrastive_mode.empty()) cfg.train.contrastive_mode = parse_contrastive_mode(o.contrastive_mode);
  cfg.validate();
}

DatasetBundle obtain_dataset(const Common& c, const RunConfig& cfg) {
  return c.data.empty() ? build_dataset(cfg) : load_dataset(c.data);
}

ParameterSet obtain_backbone(const Common& c, const RunConfig& cfg, const Dataset& dataset) {
  if (!c.backbone.empty()) return load_checkpoint(c.backbone).params;
  std::cerr << "no --backbone given; pretraining from the config\n";
  return pretrain_backbone(cfg.model, dataset, cfg.pretrain);
}

void add_common(CLI::App* app, Common& c, bool data, bool backbone) {
  app->add_option("--config", c.config, "Run config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed for this stage");
  app->add_option("--out", c.out, "Output directory");
  if (data) app->add_option("--data", c.data, "Dataset file from gen-data")->check(CLI::ExistingFile);
  if (backbone) app->add_option("--backbone", c.backbone, "Pretrained checkpoint")->check(CLI::ExistingFile);
}

void add_overrides(CLI::App* app, Overrides& o) {
  const auto on_off = CLI::IsMember({"on", "off"});
  app->add_option("--da", o.da, "Distribution alignment")->check(on_off);
  app->add_option("--logit-da", o.logit_da, "Apply the alignment vector to logits")->check(on_off);
  app->add_option("--activation", o.activation, "Adapter activation, e.g. linear, relu, leaky_relu:0.5");
  app->add_option("--contrastive-mode", o.contrastive_mode, "standard or as-written")
      ->check(CLI::IsMember({"standard", "as-written", "as_written"}));
}

int cmd_gen_data(const Common& c) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.data.seed = *c.seed;
  const auto bundle = build_dataset(cfg);
  const fs::path path = fs::path(c.out) / "dataset.gcd";
  save_dataset(path, bundle);
  std::cout << fmt::format("wrote {} ({} samples, {} labeled, {} unlabeled)\n", path.string(), bundle.dataset.size(),
                           bundle.split.labeled.size(), bundle.split.unlabeled.size());
  return 0;
}

int cmd_pretrain(const Common& c) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.pretrain.seed = *c.seed;
  const auto bundle = obtain_dataset(c, cfg);
  std::vector<PretrainEpoch> log;
  ParameterSet params = pretrain_backbone(cfg.model, bundle.dataset, cfg.pretrain, &log);
  ModelConfig mcfg = cfg.model;
  mcfg.adapter.adapted_blocks = 0;
  Checkpoint ckpt{mcfg, cfg.pretrain.seed, cfg.pretrain.epochs, "pretrain", std::move(params)};
  const fs::path out(c.out);
  save_checkpoint(out / "pretrained.ckpt", ckpt);
  std::string csv = "epoch,lr,loss\n";
  for (const auto& e : log) csv += fmt::format("{},{},{}\n", e.epoch, e.lr, e.loss);
  write_file(out / "pretrain_log.csv", csv);
  std::cout << fmt::format("wrote {}\n", (out / "pretrained.ckpt").string());
  return 0;
}

int cmd_train(const Common& c, const Overrides& o) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.train.seed = *c.seed;
  apply_overrides(cfg, o);
  const auto bundle = obtain_dataset(c, cfg);
  const ParameterSet pretrained = obtain_backbone(c, cfg, bundle.dataset);
  GcdModel model = make_finetune_model(cfg.model, pretrained, cfg.train.seed);

  const fs::path out(c.out);
  fs::create_directories(out);
  write_file(out / "config.json", to_json(cfg));
  std::ofstream csv(out / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open " + (out / "metrics.csv").string());
  csv << metrics_csv_header() << std::flush;

  TrainHooks hooks;
  hooks.checkpoint_dir = out / "checkpoints";
  hooks.on_epoch = [&](const EpochMetrics& m) {
    csv << metrics_csv_row(m) << std::flush;
    if (!csv) throw IoError("failed writing metrics.csv");
    std::cerr << fmt::format("epoch {:3d}  loss {:8.4f}  all {:.4f}  seen {:.4f}  novel {:.4f}  seen-ratio {:.3f}\n",
                             m.epoch, m.loss_total, m.acc_all, m.acc_seen, m.acc_novel, m.predicted_seen_ratio);
  };
  const RunResult result = train_run(model, bundle.dataset, bundle.split, cfg.train, hooks);
  save_checkpoint(out / "final.ckpt", make_checkpoint(model, "final", cfg.train.epochs));
  const auto& last = result.metrics.back();
  std::cout << fmt::format("acc_all {:.4f} acc_seen {:.4f} acc_novel {:.4f}\n", last.acc_all, last.acc_seen,
                           last.acc_novel);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  RunConfig cfg = load_config(c);
  const auto bundle = obtain_dataset(c, cfg);
  const GcdModel model = restore_model(load_checkpoint(checkpoint));
  const auto ev = evaluate_model(model, bundle.dataset, bundle.split, c.seed.value_or(0));
  const fs::path out(c.out);
  write_file(out / "eval.json", report_json(ev));
  write_file(out / "eval.txt", report_text(ev));
  write_file(out / "class_mass.csv", class_mass_csv(ev.bias));
  std::cout << report_text(ev);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& spec_path, const std::string& axis,
              const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds, std::size_t workers) {
  SweepSpec spec;
  if (!spec_path.empty()) {
    spec = load_sweep_spec(spec_path);
  } else {
    if (axis.empty()) throw ConfigError("sweep needs --spec or --axis");
    spec.axis = parse_sweep_axis(axis);
    spec.base = load_config(c);
  }
  if (!axis.empty()) spec.axis = parse_sweep_axis(axis);
  if (!values.empty()) spec.values = values;
  if (!seeds.empty()) spec.seeds = seeds;
  spec.validate();

  const auto bundle = obtain_dataset(c, spec.base);
  const ParameterSet pretrained = obtain_backbone(c, spec.base, bundle.dataset);
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto rows = run_sweep(spec, bundle, pretrained, workers, [&](const SweepRow& r) {
    std::cerr << fmt::format("{}={} seed {}: acc_all {:.4f}\n", to_string(spec.axis), r.axis_value, r.seed, r.acc_all);
  });
  write_file(out / "sweep.csv", sweep_csv(spec.axis, rows));
  std::cout << fmt::format("wrote {} ({} runs)\n", (out / "sweep.csv").string(), rows.size());
  return 0;
}

int cmd_analyze(const Common& c, std::vector<std::string> checkpoints) {
  RunConfig cfg = load_config(c);
  const auto bundle = obtain_dataset(c, cfg);
  const ParameterSet pretrained = obtain_backbone(c, cfg, bundle.dataset);

  std::vector<fs::path> files;
  for (const auto& p : checkpoints) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(p);
    }
  }
  if (files.empty()) throw ConfigError("analyze: no checkpoints given");

  std::string csv = "checkpoint,stage,epoch,predicted_seen_ratio,prior_seen_ratio,feature_similarity,acc_all\n";
  BiasReport last_bias;
  std::optional<Tensor> reference;
  for (const auto& f : files) {
    const Checkpoint ckpt = load_checkpoint(f);
    const GcdModel model = restore_model(ckpt);
    if (!reference) {
      const GcdModel frozen = make_finetune_model(ckpt.model, pretrained, ckpt.seed);
      reference = dataset_features(frozen, bundle.dataset);
    }
    const Tensor feats = dataset_features(model, bundle.dataset);
    const auto pred = predict_classes(model, feats);
    last_bias = bias_report(pred, bundle.split);
    std::vector<std::size_t> pred_u;
    for (std::size_t id : bundle.split.unlabeled) pred_u.push_back(pred[id]);
    const auto report = gcd_accuracy(pred_u, bundle.split);
    csv += fmt::format("{},{},{},{},{},{},{}\n", f.filename().string(), ckpt.stage, ckpt.epoch,
                       last_bias.predicted_seen_ratio, bundle.split.prior_seen_ratio(), mean_cosine(*reference, feats),
                       report.acc_all);
  }
  const fs::path out(c.out);
  write_file(out / "trajectory.csv", csv);
  write_file(out / "class_mass.csv", class_mass_csv(last_bias));
  std::cout << fmt::format("wrote {} ({} checkpoints)\n", (out / "trajectory.csv").string(), files.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear adapters for generalized category discovery on synthetic token tasks"};
  app.require_subcommand(1);

  Common gen, pre, train, eval, sweep, analyze;
  Overrides train_over;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset and its seen/novel split");
  add_common(gen_cmd, gen, false, false);

  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining of the toy backbone");
  add_common(pre_cmd, pre, true, false);

  auto* train_cmd = app.add_subcommand("train", "Fine-tune adapters, projection head and prototypes");
  add_common(train_cmd, train, true, true);
  add_overrides(train_cmd, train_over);

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "GCD accuracy and k-means baseline of a checkpoint");
  add_common(eval_cmd, eval, true, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);

  std::string spec_path, axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  std::size_t workers = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "Fan out (axis value x seed) training runs into a tidy CSV");
  add_common(sweep_cmd, sweep, true, true);
  sweep_cmd->add_option("--spec", spec_path, "Sweep spec JSON")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--axis", axis, "activation, s_a, d_hat, n or s_d");
  sweep_cmd->add_option("--values", values, "Comma-separated axis values")->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  sweep_cmd->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);

  std::vector<std::string> checkpoints;
  auto* analyze_cmd = app.add_subcommand("analyze", "Bias and feature-similarity trajectories from checkpoints");
  add_common(analyze_cmd, analyze, true, true);
  analyze_cmd->add_option("--checkpoints", checkpoints, "Checkpoint files or directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*pre_cmd) return cmd_pretrain(pre);
    if (*train_cmd) return cmd_train(train, train_over);
    if (*eval_cmd) return cmd_eval(eval, checkpoint);
    if (*sweep_cmd) return cmd_sweep(sweep, spec_path, axis, values, seeds, workers);
    if (*analyze_cmd) return cmd_analyze(analyze, checkpoints);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
