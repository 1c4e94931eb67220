// SPDX-License-Identifier: Apache-2.0
//
// Synthetic token-sequence GCD tasks: generation, seen/novel splits, two-view
// augmentation, the balanced labeled/unlabeled sampler and the dataset file.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lagcd {

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t num_seen = 5;
  std::size_t samples_per_class = 100;
  std::size_t token_len = 8;   // content tokens per sample
  std::size_t token_dim = 16;
  double class_separation = 4.0;  // minimum pairwise prototype distance
  double noise_sigma = 1.0;
  /// Typical pairwise prototype distance as a multiple of class_separation.
  double prototype_spread = 2.0;
  std::uint64_t seed = 0;

  std::size_t sample_size() const { return token_len * token_dim; }
  std::size_t num_samples() const { return num_classes * samples_per_class; }
  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<double> values;       // num_samples x token_len x token_dim, id order
  std::vector<std::size_t> labels;  // ground truth per sample id

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t id) const;
  /// Concatenated samples for `ids`, in order.
  std::vector<double> gather(std::span<const std::size_t> ids) const;
};

/// Class prototypes, num_classes x sample_size, row-major. Deterministic in spec.seed.
std::vector<double> class_prototypes(const SyntheticSpec& spec);

/// Prototype plus i.i.d. N(0, noise_sigma^2) per entry; samples are grouped by class.
Dataset generate(const SyntheticSpec& spec);

struct GcdSplit {
  std::size_t num_classes = 0;
  std::vector<std::size_t> seen_classes;   // C_s, sorted
  std::vector<std::size_t> novel_classes;  // C_n, sorted
  std::vector<std::size_t> labeled;        // D_l sample ids, ascending
  std::vector<std::size_t> unlabeled;      // D_u sample ids, ascending
  std::vector<std::size_t> truth;          // ground truth for every sample id (evaluation only)

  bool is_seen(std::size_t cls) const;
  /// Fraction of all samples whose ground truth is a seen class; the reference
  /// line for the predicted-seen ratio.
  double prior_seen_ratio() const;
  friend bool operator==(const GcdSplit&, const GcdSplit&) = default;
};

/// The first num_seen classes of a seeded shuffle become C_s; round(fraction * n_c)
/// samples of every seen class go to D_l, everything else to D_u.
GcdSplit make_split(std::span<const std::size_t> labels, std::size_t num_classes, std::size_t num_seen,
                    double labeled_fraction, std::uint64_t seed);
GcdSplit make_split(const Dataset& dataset, std::size_t num_seen, double labeled_fraction, std::uint64_t seed);

struct AugmentConfig {
  double jitter_sigma = 0.5;
  double token_drop = 0.15;
  void validate() const;
};

/// Two independent draws of Gaussian jitter plus per-token dropout. The class
/// token is added by the model, so every token of a sample is eligible.
std::pair<std::vector<double>, std::vector<double>> two_views(std::span<const double> sample, std::size_t token_dim,
                                                              const AugmentConfig& aug, std::mt19937_64& rng);
std::pair<std::vector<double>, std::vector<double>> two_views(std::span<const double> sample, std::size_t token_dim,
                                                              const AugmentConfig& aug, std::uint64_t seed);

struct BatchIndices {
  std::vector<std::size_t> ids;           // labeled half first, then unlabeled half
  std::vector<std::uint8_t> labeled_mask;
};

/// ceil(max(|D_l|, |D_u|) / (B/2)).
std::size_t balanced_epoch_length(const GcdSplit& split, std::size_t batch_size);

/// One epoch of batches with exactly B/2 labeled and B/2 unlabeled samples. The
/// larger pool is visited in a random permutation (padded by draws with replacement
/// to fill the last batch); the smaller pool is drawn with replacement.
std::vector<BatchIndices> balanced_epoch(const GcdSplit& split, std::size_t batch_size, std::mt19937_64& rng);

struct Batch {
  std::size_t size = 0;
  std::vector<double> view1, view2;  // size x sample_size each
  std::vector<std::uint8_t> labeled_mask;
  std::vector<std::size_t> labels;  // meaningful where labeled_mask is set
  std::vector<std::size_t> ids;
};

Batch make_batch(const Dataset& dataset, const BatchIndices& indices, const AugmentConfig& aug, std::mt19937_64& rng);

struct DatasetBundle {
  Dataset dataset;
  GcdSplit split;
  double labeled_fraction = 0.5;
  std::uint64_t split_seed = 0;
};

/// "GCDSYN01", u64 little-endian header length, JSON header, little-endian f64 payload.
std::string encode_dataset(const DatasetBundle& bundle);
DatasetBundle decode_dataset(std::string_view bytes);
void save_dataset(const std::filesystem::path& path, const DatasetBundle& bundle);
DatasetBundle load_dataset(const std::filesystem::path& path);

}  // namespace lagcd
