// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "lagcd/data.hpp"
#include "lagcd/errors.hpp"
#include "test_util.hpp"

using namespace lagcd;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lagcd_test_" + name);
}

}  // namespace

TEST(Generate, DeterministicAndSeedSensitive) {
  SyntheticSpec s = lagcd::testing::tiny_spec();
  const Dataset a = generate(s), b = generate(s);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 1;
  EXPECT_NE(generate(s).values, a.values);
}

TEST(Generate, NoiseFreeSamplesEqualPrototypes) {
  SyntheticSpec s = lagcd::testing::tiny_spec();
  s.noise_sigma = 0.0;
  const Dataset ds = generate(s);
  const auto protos = class_prototypes(s);
  for (std::size_t id = 0; id < ds.size(); ++id) {
    const auto x = ds.sample(id);
    const std::size_t c = ds.labels[id];
    EXPECT_TRUE(std::equal(x.begin(), x.end(), protos.begin() + static_cast<long>(c * s.sample_size())));
  }
}

TEST(Generate, PrototypesRespectSeparation) {
  SyntheticSpec s;
  const auto protos = class_prototypes(s);
  const std::size_t d = s.sample_size();
  for (std::size_t a = 0; a < s.num_classes; ++a)
    for (std::size_t b = a + 1; b < s.num_classes; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = protos[a * d + j] - protos[b * d + j];
        sq += diff * diff;
      }
      EXPECT_GE(std::sqrt(sq), s.class_separation);
    }
}

TEST(Generate, UnachievableSeparationThrows) {
  SyntheticSpec s = lagcd::testing::tiny_spec();
  s.class_separation = 1e6;
  s.prototype_spread = 1e-6;
  EXPECT_THROW(class_prototypes(s), GenerationError);
}

// Monte-Carlo: nearest prototype classification of raw samples on the default task.
TEST(Generate, DefaultTaskNearestPrototypeAccuracy) {
  SyntheticSpec s;
  const Dataset ds = generate(s);
  const auto protos = class_prototypes(s);
  const std::size_t d = s.sample_size();
  std::size_t correct = 0;
  for (std::size_t id = 0; id < ds.size(); ++id) {
    const auto x = ds.sample(id);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < s.num_classes; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (x[j] - protos[c * d + j]) * (x[j] - protos[c * d + j]);
      if (sq < best_d) {
        best_d = sq;
        best = c;
      }
    }
    correct += best == ds.labels[id];
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(ds.size()), 0.99);
}

TEST(Generate, InvalidSpecRejected) {
  SyntheticSpec s;
  s.num_seen = 10;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.num_seen = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Split, DefaultToyArithmetic) {
  const Dataset ds = generate(SyntheticSpec{});
  const GcdSplit split = make_split(ds, 5, 0.5, 0);
  EXPECT_EQ(split.labeled.size(), 250u);
  EXPECT_EQ(split.unlabeled.size(), 750u);
  EXPECT_DOUBLE_EQ(split.prior_seen_ratio(), 0.5);
}

TEST(Split, Cifar100GeometryOverManySeeds) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 100; ++c) labels.insert(labels.end(), 500, c);
  const GcdSplit half = make_split(labels, 100, 80, 0.5, 0);
  EXPECT_EQ(half.labeled.size(), 20000u);
  EXPECT_EQ(half.unlabeled.size(), 30000u);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const GcdSplit split = make_split(labels, 100, 80, 0.8, seed);
    ASSERT_EQ(split.labeled.size(), 32000u);
    ASSERT_EQ(split.unlabeled.size(), 18000u);
    for (std::size_t id : split.labeled) ASSERT_TRUE(split.is_seen(labels[id])) << "seed " << seed;
  }
}

TEST(Split, PartitionAndCoverage) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  const GcdSplit split = make_split(ds, 2, 0.5, 3);
  std::set<std::size_t> all(split.labeled.begin(), split.labeled.end());
  for (std::size_t id : split.unlabeled) EXPECT_TRUE(all.insert(id).second) << "overlap at " << id;
  EXPECT_EQ(all.size(), ds.size());
  std::set<std::size_t> truth_u;
  for (std::size_t id : split.unlabeled) truth_u.insert(split.truth[id]);
  EXPECT_EQ(truth_u.size(), 4u);
  EXPECT_EQ(split.seen_classes.size() + split.novel_classes.size(), 4u);
  EXPECT_EQ(make_split(ds, 2, 0.5, 3), split);
}

TEST(Split, RejectsBadArguments) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  EXPECT_THROW(make_split(ds, 4, 0.5, 0), ConfigError);
  EXPECT_THROW(make_split(ds, 2, 1.0, 0), ConfigError);
  EXPECT_THROW(make_split(ds, 2, 0.0, 0), ConfigError);
}

TEST(Augment, IdentityWhenDisabled) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  AugmentConfig aug{0.0, 0.0};
  auto [a, b] = two_views(ds.sample(0), 4, aug, 1);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), ds.sample(0).begin()));
  EXPECT_EQ(a, b);
}

TEST(Augment, FullDropZeroesEverything) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  AugmentConfig aug{0.5, 1.0};
  auto [a, b] = two_views(ds.sample(3), 4, aug, 1);
  for (double v : a) EXPECT_EQ(v, 0.0);
  for (double v : b) EXPECT_EQ(v, 0.0);
}

TEST(Augment, ReproducibleAndIndependentViews) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  AugmentConfig aug;
  auto p1 = two_views(ds.sample(1), 4, aug, 9);
  auto p2 = two_views(ds.sample(1), 4, aug, 9);
  EXPECT_EQ(p1, p2);
  EXPECT_NE(p1.first, p1.second);
}

TEST(Augment, DroppedTokensAreWholeTokens) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  AugmentConfig aug{0.0, 0.5};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [a, b] = two_views(ds.sample(2), 4, aug, seed);
    for (const auto* v : {&a, &b}) {
      for (std::size_t t = 0; t < 3; ++t) {
        const bool zero = std::all_of(v->begin() + static_cast<long>(t * 4), v->begin() + static_cast<long>(t * 4 + 4),
                                      [](double x) { return x == 0.0; });
        const bool kept = std::equal(v->begin() + static_cast<long>(t * 4), v->begin() + static_cast<long>(t * 4 + 4),
                                     ds.sample(2).begin() + static_cast<long>(t * 4));
        EXPECT_TRUE(zero || kept);
      }
    }
  }
}

TEST(Sampler, ExactCompositionEveryBatchManySeeds) {
  const Dataset ds = generate(SyntheticSpec{});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GcdSplit split = make_split(ds, 5, 0.5, seed);
    std::mt19937_64 rng(seed);
    for (int epoch = 0; epoch < 3; ++epoch) {
      const auto batches = balanced_epoch(split, 32, rng);
      ASSERT_EQ(batches.size(), balanced_epoch_length(split, 32));
      for (const auto& b : batches) {
        ASSERT_EQ(b.ids.size(), 32u);
        std::size_t labeled = 0;
        for (std::size_t i = 0; i < 32; ++i) {
          labeled += b.labeled_mask[i];
          const bool in_l = std::binary_search(split.labeled.begin(), split.labeled.end(), b.ids[i]);
          ASSERT_EQ(in_l, b.labeled_mask[i] != 0);
        }
        ASSERT_EQ(labeled, 16u);
      }
    }
  }
}

TEST(Sampler, EpochCountingOracle) {
  const Dataset ds = generate(SyntheticSpec{});
  const GcdSplit split = make_split(ds, 5, 0.5, 0);
  std::mt19937_64 rng(1);
  const auto batches = balanced_epoch(split, 100, rng);
  EXPECT_EQ(batches.size(), 15u);
  std::vector<std::size_t> count(ds.size(), 0);
  for (const auto& b : batches)
    for (std::size_t id : b.ids) ++count[id];
  // Every unlabeled sample appears at least once; labeled samples about three times on average.
  double labeled_total = 0.0;
  for (std::size_t id : split.unlabeled) EXPECT_GE(count[id], 1u);
  for (std::size_t id : split.labeled) labeled_total += static_cast<double>(count[id]);
  EXPECT_NEAR(labeled_total / 250.0, 3.0, 1e-12);
}

TEST(Sampler, RejectsOddBatchAndEmptyPool) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  const GcdSplit split = make_split(ds, 2, 0.5, 0);
  std::mt19937_64 rng(1);
  EXPECT_THROW(balanced_epoch(split, 7, rng), ConfigError);
  GcdSplit empty = split;
  empty.labeled.clear();
  EXPECT_THROW(balanced_epoch(empty, 8, rng), ConfigError);
}

TEST(Batch, CarriesLabelsOfLabeledRows) {
  const Dataset ds = generate(lagcd::testing::tiny_spec());
  const GcdSplit split = make_split(ds, 2, 0.5, 0);
  std::mt19937_64 rng(2);
  const auto epoch = balanced_epoch(split, 8, rng);
  const Batch b = make_batch(ds, epoch.front(), AugmentConfig{}, rng);
  EXPECT_EQ(b.size, 8u);
  EXPECT_EQ(b.view1.size(), 8u * 12u);
  for (std::size_t i = 0; i < 8; ++i)
    if (b.labeled_mask[i]) EXPECT_EQ(b.labels[i], ds.labels[b.ids[i]]);
}

TEST(DatasetFile, RoundTripIsByteIdentical) {
  DatasetBundle bundle;
  bundle.dataset = generate(lagcd::testing::tiny_spec());
  bundle.split = make_split(bundle.dataset, 2, 0.5, 4);
  bundle.split_seed = 4;
  const std::string bytes = encode_dataset(bundle);
  const DatasetBundle back = decode_dataset(bytes);
  EXPECT_EQ(back.dataset.values, bundle.dataset.values);
  EXPECT_EQ(back.split, bundle.split);
  EXPECT_EQ(encode_dataset(back), bytes);
  const auto path = temp_path("ds.gcd");
  save_dataset(path, bundle);
  EXPECT_EQ(encode_dataset(load_dataset(path)), bytes);
  std::filesystem::remove(path);
}

TEST(DatasetFile, CorruptionRejected) {
  DatasetBundle bundle;
  bundle.dataset = generate(lagcd::testing::tiny_spec());
  bundle.split = make_split(bundle.dataset, 2, 0.5, 4);
  const std::string bytes = encode_dataset(bundle);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 8)), FormatError);
  std::string bad_header = bytes;
  bad_header[17] = '#';
  EXPECT_THROW(decode_dataset(bad_header), FormatError);
  EXPECT_THROW(decode_dataset(bytes + "extra"), FormatError);
  EXPECT_THROW(load_dataset(temp_path("does_not_exist.gcd")), IoError);
}
