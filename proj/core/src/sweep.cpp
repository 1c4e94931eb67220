// SPDX-License-Identifier: Apache-2.0
#include "lagcd/sweep.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "json_io.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/train.hpp"

namespace lagcd {

SweepAxis parse_sweep_axis(std::string_view text) {
  if (text == "activation") return SweepAxis::Activation;
  if (text == "s_a" || text == "scale") return SweepAxis::AdapterScale;
  if (text == "d_hat" || text == "bottleneck") return SweepAxis::Bottleneck;
  if (text == "n" || text == "adapted_blocks") return SweepAxis::AdaptedBlocks;
  if (text == "s_d") return SweepAxis::AlignmentScale;
  throw ConfigError("unknown sweep axis '" + std::string(text) + "' (activation, s_a, d_hat, n, s_d)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Activation: return "activation";
    case SweepAxis::AdapterScale: return "s_a";
    case SweepAxis::Bottleneck: return "d_hat";
    case SweepAxis::AdaptedBlocks: return "n";
    case SweepAxis::AlignmentScale: return "s_d";
  }
  return "activation";
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep: values must not be empty");
  if (seeds.empty()) throw ConfigError("sweep: seeds must not be empty");
  for (const auto& v : values) (void)apply_axis(base, axis, v, seeds.front());
}

namespace {

double parse_double(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("sweep: '" + text + "' is not a number");
  return v;
}

std::size_t parse_count(const std::string& text) {
  const double v = parse_double(text);
  if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError("sweep: '" + text + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig apply_axis(const RunConfig& base, SweepAxis axis, const std::string& value, std::uint64_t seed) {
  RunConfig cfg = base;
  switch (axis) {
    case SweepAxis::Activation: cfg.model.adapter.activation = Activation::parse(value); break;
    case SweepAxis::AdapterScale: cfg.model.adapter.scale = parse_double(value); break;
    case SweepAxis::Bottleneck: cfg.model.adapter.bottleneck_dim = parse_count(value); break;
    case SweepAxis::AdaptedBlocks: cfg.model.adapter.adapted_blocks = parse_count(value); break;
    case SweepAxis::AlignmentScale: cfg.train.weights.s_d = parse_double(value); break;
  }
  cfg.train.seed = seed;
  cfg.validate();
  return cfg;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
  const auto j = detail::parse_json(read_file(path), "sweep spec");
  detail::ObjectReader r(j, "sweep");
  SweepSpec spec;
  std::string axis;
  r.get("axis", axis);
  spec.axis = parse_sweep_axis(axis);
  if (const auto* values = r.child("values")) {
    if (!values->is_array()) throw ConfigError("sweep.values must be an array");
    for (const auto& v : *values) spec.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
  }
  r.get("seeds", spec.seeds);
  if (const auto* base = r.child("base_config")) {
    if (base->is_string()) {
      spec.base = load_run_config(path.parent_path() / base->get<std::string>());
    } else {
      spec.base = run_config_from_json(base->dump());
    }
  }
  r.finish();
  spec.validate();
  return spec;
}

SweepRow run_one(const RunConfig& cfg, const DatasetBundle& data, const ParameterSet& pretrained,
                 const std::string& axis_value) {
  GcdModel model = make_finetune_model(cfg.model, pretrained, cfg.train.seed);
  const RunResult result = train_run(model, data.dataset, data.split, cfg.train);
  const EpochMetrics& last = result.metrics.back();
  SweepRow row;
  row.axis_value = axis_value;
  row.seed = cfg.train.seed;
  row.acc_all = last.acc_all;
  row.acc_seen = last.acc_seen;
  row.acc_novel = last.acc_novel;
  row.sparsity = last.adapter_sparsity;
  row.similarity = last.feature_similarity;
  row.predicted_seen_ratio = last.predicted_seen_ratio;
  return row;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const DatasetBundle& data, const ParameterSet& pretrained,
                                std::size_t workers, const std::function<void(const SweepRow&)>& on_row) {
  spec.validate();
  struct Job {
    std::string value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : spec.values)
    for (auto s : spec.seeds) jobs.push_back({v, s});

  std::vector<SweepRow> rows(jobs.size());
  std::vector<char> done(jobs.size(), 0);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::exception_ptr error;
  std::size_t emitted = 0;

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size() || failed) return;
      try {
        const RunConfig cfg = apply_axis(spec.base, spec.axis, jobs[i].value, jobs[i].seed);
        SweepRow row = run_one(cfg, data, pretrained, jobs[i].value);
        std::lock_guard lock(mu);
        rows[i] = std::move(row);
        done[i] = 1;
        while (emitted < jobs.size() && done[emitted]) {
          if (on_row) on_row(rows[emitted]);
          ++emitted;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
        return;
      }
    }
  };

  const std::size_t width = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < width; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return rows;
}

std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,axis_value,seed,acc_all,acc_seen,acc_novel,sparsity,similarity,predicted_seen_ratio\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(axis), r.axis_value, r.seed, r.acc_all, r.acc_seen,
                       r.acc_novel, r.sparsity, r.similarity, r.predicted_seen_ratio);
  }
  return out;
}

}  // namespace lagcd
