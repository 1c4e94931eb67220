// SPDX-License-Identifier: Apache-2.0
//
// One JSON document describing a whole experiment: data, split, model,
// pretraining and fine-tuning.
#pragma once

#include <filesystem>
#include <string>

#include "lagcd/data.hpp"
#include "lagcd/model.hpp"
#include "lagcd/train.hpp"

namespace lagcd {

struct RunConfig {
  SyntheticSpec data;
  double labeled_fraction = 0.5;
  std::uint64_t split_seed = 0;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train = TrainConfig::toy();

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(std::string_view text);
std::string to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

/// Generated dataset and its split as described by `cfg`.
DatasetBundle build_dataset(const RunConfig& cfg);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace lagcd
