// SPDX-License-Identifier: Apache-2.0
//
// Fan-out of (axis value x seed) fine-tuning runs over a shared pretrained
// backbone, collected into one tidy CSV.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lagcd/config.hpp"
#include "lagcd/data.hpp"
#include "lagcd/model.hpp"

namespace lagcd {

enum class SweepAxis { Activation, AdapterScale, Bottleneck, AdaptedBlocks, AlignmentScale };
SweepAxis parse_sweep_axis(std::string_view text);
std::string to_string(SweepAxis axis);

struct SweepSpec {
  SweepAxis axis = SweepAxis::Activation;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  RunConfig base;

  void validate() const;
};

/// Reads {"axis", "values", "seeds", "base_config"}; base_config is a path
/// relative to the sweep file or an inline object.
SweepSpec load_sweep_spec(const std::filesystem::path& path);

/// Copy of `base` with the axis set to `value` and the fine-tuning seed set to `seed`.
RunConfig apply_axis(const RunConfig& base, SweepAxis axis, const std::string& value, std::uint64_t seed);

struct SweepRow {
  std::string axis_value;
  std::uint64_t seed = 0;
  double acc_all = 0.0;
  double acc_seen = 0.0;
  double acc_novel = 0.0;
  double sparsity = 0.0;
  double similarity = 0.0;
  double predicted_seen_ratio = 0.0;
};

/// One fine-tuning run on a pretrained backbone, summarized by its last epoch.
SweepRow run_one(const RunConfig& cfg, const DatasetBundle& data, const ParameterSet& pretrained,
                 const std::string& axis_value);

/// Runs every (value, seed) pair on a pool of `workers` threads. Rows come back
/// in (value, seed) order regardless of completion order.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const DatasetBundle& data, const ParameterSet& pretrained,
                                std::size_t workers, const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace lagcd
