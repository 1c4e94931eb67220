// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints: "GCDCKPT1", u64 little-endian header length, JSON header
// (model config, seed, epoch, stage, parameter names and shapes), then every
// parameter as little-endian f64 in name order.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lagcd/model.hpp"

namespace lagcd {

struct Checkpoint {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string stage;  // "pretrain", "warmup", "epoch", "final", ...
  ParameterSet params;
};

Checkpoint make_checkpoint(const GcdModel& model, std::string stage, std::size_t epoch);
/// Model built from the checkpoint's config and seed with every stored parameter loaded.
GcdModel restore_model(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lagcd
