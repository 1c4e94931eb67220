// SPDX-License-Identifier: Apache-2.0
#include "lagcd/checkpoint.hpp"

#include "binary_io.hpp"
#include "json_io.hpp"
#include "lagcd/config.hpp"

namespace lagcd {

namespace {
constexpr std::string_view kMagic = "GCDCKPT1";
}

Checkpoint make_checkpoint(const GcdModel& model, std::string stage, std::size_t epoch) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.seed = model.seed();
  ckpt.epoch = epoch;
  ckpt.stage = std::move(stage);
  ckpt.params = model.snapshot();
  return ckpt;
}

GcdModel restore_model(const Checkpoint& ckpt) {
  GcdModel model(ckpt.model, ckpt.seed);
  model.load(ckpt.params);
  return model;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  using detail::json;
  json params = json::array();
  for (const auto& [name, p] : ckpt.params) params.push_back({{"name", name}, {"shape", p.shape}});
  const json header = {{"model", detail::to_json_value(ckpt.model)},
                       {"seed", ckpt.seed},
                       {"epoch", ckpt.epoch},
                       {"stage", ckpt.stage},
                       {"params", params}};
  std::string out = detail::frame(kMagic, header.dump());
  for (const auto& [name, p] : ckpt.params) detail::put_f64(out, p.data);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const auto framed = detail::unframe(bytes, kMagic, "checkpoint");
  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> layout;
  try {
    const auto header = detail::parse_json(framed.header, "checkpoint header");
    detail::read_json(header.at("model"), ckpt.model);
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    ckpt.stage = header.at("stage").get<std::string>();
    for (const auto& p : header.at("params")) {
      layout.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<Shape>());
    }
  } catch (const detail::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  std::size_t total = 0;
  for (const auto& [name, shape] : layout) total += shape_numel(shape);
  if (framed.payload.size() != total * 8) {
    throw FormatError("checkpoint payload holds " + std::to_string(framed.payload.size()) + " bytes, header declares " +
                      std::to_string(total * 8));
  }
  std::size_t offset = 0;
  for (auto& [name, shape] : layout) {
    StoredParameter p{shape, std::vector<double>(shape_numel(shape))};
    detail::get_f64(framed.payload.substr(offset), p.data);
    offset += p.data.size() * 8;
    if (!ckpt.params.emplace(name, std::move(p)).second) throw FormatError("checkpoint: duplicate parameter " + name);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace lagcd
