// SPDX-License-Identifier: Apache-2.0
// JSON (de)serialization of the config structs. Private to the library.
#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "lagcd/data.hpp"
#include "lagcd/errors.hpp"
#include "lagcd/losses.hpp"
#include "lagcd/model.hpp"
#include "lagcd/train.hpp"

namespace lagcd::detail {

using json = nlohmann::json;

/// Reads known keys of one object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context);

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }
  const json* child(const char* key);
  const std::string& context() const { return context_; }
  void finish() const;

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

json to_json_value(const SyntheticSpec& v);
json to_json_value(const BackboneConfig& v);
json to_json_value(const AdapterConfig& v);
json to_json_value(const HeadConfig& v);
json to_json_value(const ModelConfig& v);
json to_json_value(const LossWeights& v);
json to_json_value(const AugmentConfig& v);
json to_json_value(const TrainConfig& v);
json to_json_value(const PretrainConfig& v);
json to_json_value(const GcdSplit& v);

void read_json(const json& j, SyntheticSpec& v, const std::string& context = "data");
void read_json(const json& j, BackboneConfig& v, const std::string& context = "backbone");
void read_json(const json& j, AdapterConfig& v, const std::string& context = "adapter");
void read_json(const json& j, HeadConfig& v, const std::string& context = "head");
void read_json(const json& j, ModelConfig& v, const std::string& context = "model");
void read_json(const json& j, LossWeights& v, const std::string& context = "weights");
void read_json(const json& j, AugmentConfig& v, const std::string& context = "augment");
void read_json(const json& j, TrainConfig& v, const std::string& context = "train");
void read_json(const json& j, PretrainConfig& v, const std::string& context = "pretrain");
void read_json(const json& j, GcdSplit& v, const std::string& context = "split");

json parse_json(std::string_view text, const char* what);

}  // namespace lagcd::detail
