// SPDX-License-Identifier: Apache-2.0
//
// Hungarian matching, GCD accuracy protocols, k-means, and the bias and
// feature-similarity analyses.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lagcd/data.hpp"
#include "lagcd/model.hpp"
#include "lagcd/tensor.hpp"

namespace lagcd {

/// Dense row-major matrix of scores.
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
  std::vector<long> row_to_col;  // -1 for unmatched rows
  double score = 0.0;
};

/// Maximum-score one-to-one assignment over min(rows, cols) pairs, O(n^3).
Assignment hungarian(const ScoreMatrix& score);

/// counts(pred, truth) for pred in [0, k_pred), truth in [0, k_true).
ScoreMatrix contingency(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t k_pred,
                        std::size_t k_true);

/// Best one-to-one matched accuracy of cluster ids against ground truth.
double cluster_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t k_pred,
                        std::size_t k_true);

struct EvalReport {
  double acc_all = 0.0;
  double acc_seen = 0.0;
  double acc_novel = 0.0;
  double predicted_seen_ratio = 0.0;
  std::size_t count_all = 0;
  std::size_t count_seen = 0;
  std::size_t count_novel = 0;
  /// Predicted id -> true class under the all-sample matching (-1 unmatched).
  std::vector<long> mapping;
};

/// `pred` is aligned with split.unlabeled. Seen accuracy is direct, novel and
/// all accuracies use optimal assignment.
EvalReport gcd_accuracy(std::span<const std::size_t> pred, const GcdSplit& split);

struct KMeansOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // largest centroid movement that stops the iterations
};

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<double> centroids;   // k x d
  std::vector<double> sse_history;  // after every assignment step
  std::size_t iterations = 0;
};

/// k-means++ seeding and Lloyd iterations; empty clusters are re-seeded from
/// the point farthest from its centroid.
KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Class-token features of `ids` (all samples when empty), unaugmented.
Tensor dataset_features(const GcdModel& model, const Dataset& dataset, std::span<const std::size_t> ids = {},
                        SparsityProbe* probe = nullptr, std::size_t chunk = 250);

/// argmax of the prototype classifier for each feature row.
std::vector<std::size_t> predict_classes(const GcdModel& model, const Tensor& features);

/// Mean row-wise cosine similarity of two feature matrices.
double mean_cosine(const Tensor& a, const Tensor& b);
double feature_similarity(const GcdModel& before, const GcdModel& after, const Dataset& dataset);

struct BiasReport {
  double predicted_seen_ratio = 0.0;
  std::vector<std::size_t> class_order;  // seen classes first, then novel
  std::vector<double> class_mass;        // fraction of predictions per class, in class_order
  std::size_t num_seen = 0;              // leading entries of class_order that are seen classes
};

BiasReport bias_report(std::span<const std::size_t> predictions, const GcdSplit& split);
BiasReport bias_report(const GcdModel& model, const Dataset& dataset, const GcdSplit& split);

struct ModelEvaluation {
  EvalReport prototypes;
  double kmeans_acc_all = 0.0;
  BiasReport bias;
  double adapter_sparsity = 0.0;
};

/// Prototype-classifier GCD accuracy on D_u, k-means on D_u features, and the bias report.
ModelEvaluation evaluate_model(const GcdModel& model, const Dataset& dataset, const GcdSplit& split,
                               std::uint64_t kmeans_seed);

std::string report_json(const ModelEvaluation& eval);
std::string report_text(const ModelEvaluation& eval);
std::string class_mass_csv(const BiasReport& bias);

}  // namespace lagcd
