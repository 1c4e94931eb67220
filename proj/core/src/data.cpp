// SPDX-License-Identifier: Apache-2.0
#include "lagcd/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "json_io.hpp"
#include "lagcd/config.hpp"
#include "lagcd/errors.hpp"
#include "rng.hpp"

namespace lagcd {

namespace {
constexpr std::string_view kMagic = "GCDSYN01";
constexpr int kFormatVersion = 1;
constexpr int kMaxRejectionRounds = 1000;
}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_seen == 0 || num_seen >= num_classes) throw ConfigError("num_seen must lie in [1, num_classes)");
  if (samples_per_class == 0 || token_len == 0 || token_dim == 0) {
    throw ConfigError("samples_per_class, token_len and token_dim must be positive");
  }
  if (!(class_separation > 0.0) || !std::isfinite(class_separation)) {
    throw ConfigError("class_separation must be finite and positive");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be finite and >= 0");
  if (!(prototype_spread > 0.0) || !std::isfinite(prototype_spread)) {
    throw ConfigError("prototype_spread must be finite and positive");
  }
}

std::span<const double> Dataset::sample(std::size_t id) const {
  if (id >= size()) throw PreconditionError("sample id " + std::to_string(id) + " out of range");
  const std::size_t n = spec.sample_size();
  return std::span<const double>(values).subspan(id * n, n);
}

std::vector<double> Dataset::gather(std::span<const std::size_t> ids) const {
  std::vector<double> out;
  out.reserve(ids.size() * spec.sample_size());
  for (std::size_t id : ids) {
    const auto s = sample(id);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<double> class_prototypes(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k = spec.num_classes, dim = spec.sample_size();
  const double stddev = spec.prototype_spread * spec.class_separation / std::sqrt(2.0 * static_cast<double>(dim));
  auto rng = detail::stream(spec.seed, "prototypes");
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> protos(k * dim);
  for (int round = 0; round < kMaxRejectionRounds; ++round) {
    for (auto& v : protos) v = normal(rng);
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double diff = protos[a * dim + i] - protos[b * dim + i];
          d2 += diff * diff;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    }
    if (min_dist >= spec.class_separation) return protos;
  }
  throw GenerationError("class separation " + std::to_string(spec.class_separation) + " not reached in " +
                        std::to_string(kMaxRejectionRounds) + " rounds");
}

Dataset generate(const SyntheticSpec& spec) {
  const auto protos = class_prototypes(spec);
  const std::size_t dim = spec.sample_size();
  Dataset ds;
  ds.spec = spec;
  ds.values.resize(spec.num_samples() * dim);
  ds.labels.resize(spec.num_samples());
  auto rng = detail::stream(spec.seed, "noise");
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  std::size_t id = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++id) {
      ds.labels[id] = c;
      for (std::size_t i = 0; i < dim; ++i) {
        ds.values[id * dim + i] = protos[c * dim + i] + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
      }
    }
  }
  return ds;
}

bool GcdSplit::is_seen(std::size_t cls) const {
  return std::binary_search(seen_classes.begin(), seen_classes.end(), cls);
}

double GcdSplit::prior_seen_ratio() const {
  if (truth.empty()) return 0.0;
  std::size_t seen = 0;
  for (std::size_t t : truth)
    if (is_seen(t)) ++seen;
  return static_cast<double>(seen) / static_cast<double>(truth.size());
}

GcdSplit make_split(std::span<const std::size_t> labels, std::size_t num_classes, std::size_t num_seen,
                    double labeled_fraction, std::uint64_t seed) {
  if (num_seen == 0 || num_seen >= num_classes) {
    throw ConfigError("num_seen " + std::to_string(num_seen) + " must lie in [1, " + std::to_string(num_classes) + ")");
  }
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) throw ConfigError("labeled_fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t id = 0; id < labels.size(); ++id) {
    if (labels[id] >= num_classes) throw ConfigError("label " + std::to_string(labels[id]) + " out of range");
    by_class[labels[id]].push_back(id);
  }

  std::vector<std::size_t> classes(num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  auto class_rng = detail::stream(seed, "split-classes");
  std::shuffle(classes.begin(), classes.end(), class_rng);

  GcdSplit split;
  split.num_classes = num_classes;
  split.seen_classes.assign(classes.begin(), classes.begin() + static_cast<long>(num_seen));
  split.novel_classes.assign(classes.begin() + static_cast<long>(num_seen), classes.end());
  std::sort(split.seen_classes.begin(), split.seen_classes.end());
  std::sort(split.novel_classes.begin(), split.novel_classes.end());
  split.truth.assign(labels.begin(), labels.end());

  std::vector<std::uint8_t> is_labeled(labels.size(), 0);
  auto sample_rng = detail::stream(seed, "split-samples");
  for (std::size_t c : split.seen_classes) {
    auto ids = by_class[c];
    std::shuffle(ids.begin(), ids.end(), sample_rng);
    const auto take = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(ids.size())));
    for (std::size_t i = 0; i < take; ++i) is_labeled[ids[i]] = 1;
  }
  for (std::size_t id = 0; id < labels.size(); ++id) (is_labeled[id] ? split.labeled : split.unlabeled).push_back(id);
  return split;
}

GcdSplit make_split(const Dataset& dataset, std::size_t num_seen, double labeled_fraction, std::uint64_t seed) {
  return make_split(dataset.labels, dataset.spec.num_classes, num_seen, labeled_fraction, seed);
}

void AugmentConfig::validate() const {
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) throw ConfigError("jitter_sigma must be finite and >= 0");
  if (!(token_drop >= 0.0 && token_drop <= 1.0)) throw ConfigError("token_drop must lie in [0, 1]");
}

namespace {

std::vector<double> augment_once(std::span<const double> sample, std::size_t token_dim, const AugmentConfig& aug,
                                 std::mt19937_64& rng) {
  std::vector<double> out(sample.begin(), sample.end());
  std::bernoulli_distribution drop(aug.token_drop);
  std::normal_distribution<double> jitter(0.0, aug.jitter_sigma > 0.0 ? aug.jitter_sigma : 1.0);
  for (std::size_t t = 0; t * token_dim < out.size(); ++t) {
    auto token = std::span<double>(out).subspan(t * token_dim, token_dim);
    if (drop(rng)) {
      std::fill(token.begin(), token.end(), 0.0);
    } else if (aug.jitter_sigma > 0.0) {
      for (auto& v : token) v += jitter(rng);
    }
  }
  return out;
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> two_views(std::span<const double> sample, std::size_t token_dim,
                                                              const AugmentConfig& aug, std::mt19937_64& rng) {
  if (token_dim == 0 || sample.size() % token_dim != 0) {
    throw DimensionError("two_views: sample of " + std::to_string(sample.size()) + " values is not a whole number of " +
                         std::to_string(token_dim) + "-wide tokens");
  }
  auto a = augment_once(sample, token_dim, aug, rng);
  auto b = augment_once(sample, token_dim, aug, rng);
  return {std::move(a), std::move(b)};
}

std::pair<std::vector<double>, std::vector<double>> two_views(std::span<const double> sample, std::size_t token_dim,
                                                              const AugmentConfig& aug, std::uint64_t seed) {
  auto rng = detail::stream(seed, "views");
  return two_views(sample, token_dim, aug, rng);
}

namespace {

void check_sampler(const GcdSplit& split, std::size_t batch_size) {
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be even and at least 2");
  if (split.labeled.empty()) throw ConfigError("balanced sampler: labeled pool is empty");
  if (split.unlabeled.empty()) throw ConfigError("balanced sampler: unlabeled pool is empty");
}

std::vector<std::size_t> with_replacement(const std::vector<std::size_t>& pool, std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& v : out) v = pool[pick(rng)];
  return out;
}

}  // namespace

std::size_t balanced_epoch_length(const GcdSplit& split, std::size_t batch_size) {
  check_sampler(split, batch_size);
  const std::size_t half = batch_size / 2;
  const std::size_t larger = std::max(split.labeled.size(), split.unlabeled.size());
  return (larger + half - 1) / half;
}

std::vector<BatchIndices> balanced_epoch(const GcdSplit& split, std::size_t batch_size, std::mt19937_64& rng) {
  const std::size_t batches = balanced_epoch_length(split, batch_size);
  const std::size_t half = batch_size / 2, slots = batches * half;
  const bool labeled_larger = split.labeled.size() >= split.unlabeled.size();
  const auto& larger = labeled_larger ? split.labeled : split.unlabeled;
  const auto& smaller = labeled_larger ? split.unlabeled : split.labeled;

  std::vector<std::size_t> big(larger);
  std::shuffle(big.begin(), big.end(), rng);
  const auto pad = with_replacement(larger, slots - big.size(), rng);
  big.insert(big.end(), pad.begin(), pad.end());
  const auto small = with_replacement(smaller, slots, rng);
  const auto& lab = labeled_larger ? big : small;
  const auto& unl = labeled_larger ? small : big;

  std::vector<BatchIndices> epoch(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    auto& batch = epoch[b];
    batch.ids.assign(lab.begin() + static_cast<long>(b * half), lab.begin() + static_cast<long>((b + 1) * half));
    batch.ids.insert(batch.ids.end(), unl.begin() + static_cast<long>(b * half),
                     unl.begin() + static_cast<long>((b + 1) * half));
    batch.labeled_mask.assign(batch_size, 0);
    std::fill(batch.labeled_mask.begin(), batch.labeled_mask.begin() + static_cast<long>(half), 1);
  }
  return epoch;
}

Batch make_batch(const Dataset& dataset, const BatchIndices& indices, const AugmentConfig& aug, std::mt19937_64& rng) {
  if (indices.ids.size() != indices.labeled_mask.size()) throw DimensionError("batch ids and mask differ in length");
  Batch batch;
  batch.size = indices.ids.size();
  batch.ids = indices.ids;
  batch.labeled_mask = indices.labeled_mask;
  batch.labels.resize(batch.size);
  const std::size_t n = dataset.spec.sample_size();
  batch.view1.reserve(batch.size * n);
  batch.view2.reserve(batch.size * n);
  for (std::size_t i = 0; i < batch.size; ++i) {
    const std::size_t id = indices.ids[i];
    batch.labels[i] = dataset.labels[id];
    auto [a, b] = two_views(dataset.sample(id), dataset.spec.token_dim, aug, rng);
    batch.view1.insert(batch.view1.end(), a.begin(), a.end());
    batch.view2.insert(batch.view2.end(), b.begin(), b.end());
  }
  return batch;
}

std::string encode_dataset(const DatasetBundle& bundle) {
  const auto& ds = bundle.dataset;
  if (ds.values.size() != ds.size() * ds.spec.sample_size()) throw PreconditionError("dataset values/labels disagree");
  const detail::json header = {{"format_version", kFormatVersion},
                               {"spec", detail::to_json_value(ds.spec)},
                               {"num_samples", ds.size()},
                               {"sample_size", ds.spec.sample_size()},
                               {"labels", ds.labels},
                               {"labeled_fraction", bundle.labeled_fraction},
                               {"split_seed", bundle.split_seed},
                               {"split", detail::to_json_value(bundle.split)}};
  std::string out = detail::frame(kMagic, header.dump());
  detail::put_f64(out, ds.values);
  return out;
}

DatasetBundle decode_dataset(std::string_view bytes) {
  const auto framed = detail::unframe(bytes, kMagic, "dataset");
  DatasetBundle bundle;
  std::size_t num_samples = 0, sample_size = 0;
  try {
    const auto header = detail::parse_json(framed.header, "dataset header");
    if (header.at("format_version").get<int>() != kFormatVersion) throw FormatError("dataset: unsupported version");
    detail::read_json(header.at("spec"), bundle.dataset.spec);
    num_samples = header.at("num_samples").get<std::size_t>();
    sample_size = header.at("sample_size").get<std::size_t>();
    bundle.dataset.labels = header.at("labels").get<std::vector<std::size_t>>();
    bundle.labeled_fraction = header.at("labeled_fraction").get<double>();
    bundle.split_seed = header.at("split_seed").get<std::uint64_t>();
    detail::read_json(header.at("split"), bundle.split);
  } catch (const detail::json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
  const auto& spec = bundle.dataset.spec;
  if (sample_size != spec.sample_size() || num_samples != spec.num_samples() ||
      bundle.dataset.labels.size() != num_samples || bundle.split.truth.size() != num_samples) {
    throw FormatError("dataset header: inconsistent sizes");
  }
  if (framed.payload.size() != num_samples * sample_size * 8) {
    throw FormatError("dataset payload holds " + std::to_string(framed.payload.size()) + " bytes, header declares " +
                      std::to_string(num_samples * sample_size * 8));
  }
  bundle.dataset.values.resize(num_samples * sample_size);
  detail::get_f64(framed.payload, bundle.dataset.values);
  return bundle;
}

void save_dataset(const std::filesystem::path& path, const DatasetBundle& bundle) {
  write_file(path, encode_dataset(bundle));
}

DatasetBundle load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace lagcd
