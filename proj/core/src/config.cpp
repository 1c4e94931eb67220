// SPDX-License-Identifier: Apache-2.0
#include "lagcd/config.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "lagcd/errors.hpp"

namespace lagcd {

void RunConfig::validate() const {
  data.validate();
  model.validate();
  pretrain.validate();
  train.validate();
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) throw ConfigError("labeled_fraction must lie in (0, 1)");
  if (model.backbone.token_dim != data.token_dim) throw ConfigError("model.backbone.token_dim differs from data.token_dim");
  if (model.backbone.content_tokens() != data.token_len) {
    throw ConfigError("model.backbone.seq_len must equal data.token_len + 1");
  }
  if (model.head.num_classes != data.num_classes) throw ConfigError("model.head.num_classes differs from data.num_classes");
}

RunConfig run_config_from_json(std::string_view text) {
  const auto j = detail::parse_json(text, "run config");
  RunConfig cfg;
  detail::ObjectReader r(j, "config");
  if (const auto* c = r.child("data")) detail::read_json(*c, cfg.data, "data");
  if (const auto* c = r.child("split")) {
    detail::ObjectReader s(*c, "split");
    s.get("labeled_fraction", cfg.labeled_fraction);
    s.get("seed", cfg.split_seed);
    s.finish();
  }
  if (const auto* c = r.child("model")) detail::read_json(*c, cfg.model, "model");
  if (const auto* c = r.child("pretrain")) detail::read_json(*c, cfg.pretrain, "pretrain");
  if (const auto* c = r.child("train")) detail::read_json(*c, cfg.train, "train");
  r.finish();
  cfg.validate();
  return cfg;
}

std::string to_json(const RunConfig& cfg) {
  const detail::json j = {{"data", detail::to_json_value(cfg.data)},
                          {"split", {{"labeled_fraction", cfg.labeled_fraction}, {"seed", cfg.split_seed}}},
                          {"model", detail::to_json_value(cfg.model)},
                          {"pretrain", detail::to_json_value(cfg.pretrain)},
                          {"train", detail::to_json_value(cfg.train)}};
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_file(path)); }

DatasetBundle build_dataset(const RunConfig& cfg) {
  DatasetBundle bundle;
  bundle.dataset = generate(cfg.data);
  bundle.labeled_fraction = cfg.labeled_fraction;
  bundle.split_seed = cfg.split_seed;
  bundle.split = make_split(bundle.dataset, cfg.data.num_seen, cfg.labeled_fraction, cfg.split_seed);
  return bundle;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lagcd
