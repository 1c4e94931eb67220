// SPDX-License-Identifier: Apache-2.0
#include "lagcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lagcd/errors.hpp"
#include "rng.hpp"

namespace lagcd {

Assignment hungarian(const ScoreMatrix& score) {
  if (score.rows == 0 || score.cols == 0) throw DegenerateInputError("hungarian: empty score matrix");
  if (score.values.size() != score.rows * score.cols) throw DimensionError("hungarian: matrix size mismatch");
  for (double v : score.values)
    if (!std::isfinite(v)) throw PreconditionError("hungarian: non-finite score");

  // Potentials method on cost = -score with n <= m; transpose when rows > cols.
  const bool transposed = score.rows > score.cols;
  const std::size_t n = transposed ? score.cols : score.rows;
  const std::size_t m = transposed ? score.rows : score.cols;
  const auto cost = [&](std::size_t i, std::size_t j) { return transposed ? -score(j, i) : -score(i, j); };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.row_to_col.assign(score.rows, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t a = p[j] - 1, b = j - 1;
    const std::size_t row = transposed ? b : a, col = transposed ? a : b;
    out.row_to_col[row] = static_cast<long>(col);
    out.score += score(row, col);
  }
  return out;
}

ScoreMatrix contingency(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t k_pred,
                        std::size_t k_true) {
  if (pred.size() != truth.size()) throw DimensionError("contingency: prediction and truth lengths differ");
  ScoreMatrix m{k_pred, k_true, std::vector<double>(k_pred * k_true, 0.0)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= k_pred || truth[i] >= k_true) {
      throw ProtocolError("label out of range at sample " + std::to_string(i));
    }
    m.values[pred[i] * k_true + truth[i]] += 1.0;
  }
  return m;
}

double cluster_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t k_pred,
                        std::size_t k_true) {
  if (pred.empty()) throw DegenerateInputError("cluster_accuracy of zero samples");
  const auto assignment = hungarian(contingency(pred, truth, k_pred, k_true));
  return assignment.score / static_cast<double>(pred.size());
}

EvalReport gcd_accuracy(std::span<const std::size_t> pred, const GcdSplit& split) {
  if (pred.size() != split.unlabeled.size()) {
    throw ProtocolError("gcd_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(split.unlabeled.size()) + " unlabeled samples");
  }
  if (pred.empty()) throw DegenerateInputError("gcd_accuracy: no unlabeled samples");
  const std::size_t k = split.num_classes;
  EvalReport r;
  std::vector<std::size_t> truth(pred.size()), novel_pred, novel_truth;
  std::size_t seen_correct = 0, predicted_seen = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= k) throw ProtocolError("gcd_accuracy: predicted label " + std::to_string(pred[i]) + " out of range");
    truth[i] = split.truth[split.unlabeled[i]];
    if (split.is_seen(pred[i])) ++predicted_seen;
    if (split.is_seen(truth[i])) {
      ++r.count_seen;
      if (pred[i] == truth[i]) ++seen_correct;
    } else {
      novel_pred.push_back(pred[i]);
      novel_truth.push_back(truth[i]);
    }
  }
  r.count_all = pred.size();
  r.count_novel = novel_pred.size();
  r.acc_seen = r.count_seen ? static_cast<double>(seen_correct) / static_cast<double>(r.count_seen) : 0.0;
  r.acc_novel = r.count_novel ? cluster_accuracy(novel_pred, novel_truth, k, k) : 0.0;
  const auto all = hungarian(contingency(pred, truth, k, k));
  r.acc_all = all.score / static_cast<double>(pred.size());
  r.mapping = all.row_to_col;
  r.predicted_seen_ratio = static_cast<double>(predicted_seen) / static_cast<double>(pred.size());
  return r;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  if (features.rank() != 2) throw DimensionError("kmeans: features must be a matrix");
  const std::size_t n = features.rows(), d = features.cols();
  if (k == 0 || n < k) {
    throw ConfigError("kmeans: need 1 <= k <= N, got k=" + std::to_string(k) + ", N=" + std::to_string(n));
  }
  const double* x = features.data().data();
  auto rng = detail::stream(seed, "kmeans");

  KMeansResult res;
  res.centroids.resize(k * d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : nearest) total += v;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += nearest[i];
          if (r < acc && nearest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = first(rng);
      }
    }
    std::copy_n(x + pick * d, d, res.centroids.begin() + static_cast<long>(c * d));
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(x + i * d, x + pick * d, d));
  }

  res.labels.assign(n, 0);
  std::vector<double> dist(n);
  const auto assign = [&] {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(x + i * d, res.centroids.data() + c * d, d);
        if (dd < best) {
          best = dd;
          res.labels[i] = c;
        }
      }
      dist[i] = best;
      sse += best;
    }
    res.sse_history.push_back(sse);
  };

  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    assign();
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.labels[i]];
      for (std::size_t j = 0; j < d; ++j) sums[res.labels[i] * d + j] += x[i * d + j];
    }
    double movement = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double* centroid = res.centroids.data() + c * d;
      std::vector<double> next(d);
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(x + far * d, d, next.begin());
        dist[far] = 0.0;
      } else {
        for (std::size_t j = 0; j < d; ++j) next[j] = sums[c * d + j] / static_cast<double>(counts[c]);
      }
      movement = std::max(movement, std::sqrt(sq_dist(centroid, next.data(), d)));
      std::copy(next.begin(), next.end(), centroid);
    }
    ++res.iterations;
    if (movement < options.tolerance) break;
  }
  assign();
  return res;
}

Tensor dataset_features(const GcdModel& model, const Dataset& dataset, std::span<const std::size_t> ids,
                        SparsityProbe* probe, std::size_t chunk) {
  std::vector<std::size_t> all;
  if (ids.empty()) {
    all.resize(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    ids = all;
  }
  if (chunk == 0) chunk = ids.size();
  Tape::Pause pause;
  ForwardContext ctx;
  ctx.probe = probe;
  const std::size_t d = model.config().backbone.embed_dim;
  std::vector<double> out;
  out.reserve(ids.size() * d);
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const auto part = ids.subspan(start, std::min(chunk, ids.size() - start));
    Tensor h = model.features(dataset.gather(part), part.size(), ctx);
    out.insert(out.end(), h.data().begin(), h.data().end());
  }
  return Tensor({ids.size(), d}, std::move(out));
}

std::vector<std::size_t> predict_classes(const GcdModel& model, const Tensor& features) {
  Tape::Pause pause;
  Tensor cos = prototype_cosine(model.prototypes(), features);
  const std::size_t r = cos.rows(), c = cos.cols();
  const auto v = cos.data();
  std::vector<std::size_t> pred(r);
  for (std::size_t i = 0; i < r; ++i) {
    pred[i] = static_cast<std::size_t>(std::max_element(v.begin() + static_cast<long>(i * c),
                                                        v.begin() + static_cast<long>((i + 1) * c)) -
                                       (v.begin() + static_cast<long>(i * c)));
  }
  return pred;
}

double mean_cosine(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError("mean_cosine: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw DegenerateInputError("mean_cosine of zero rows");
  const double* x = a.data().data();
  const double* y = b.data().data();
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += x[i * c + j] * y[i * c + j];
      nx += x[i * c + j] * x[i * c + j];
      ny += y[i * c + j] * y[i * c + j];
    }
    if (!(nx > 0.0 && ny > 0.0)) throw DegenerateInputError("mean_cosine: zero-norm row " + std::to_string(i));
    total += dot / std::sqrt(nx * ny);
  }
  return total / static_cast<double>(r);
}

double feature_similarity(const GcdModel& before, const GcdModel& after, const Dataset& dataset) {
  if (before.config().backbone.embed_dim != after.config().backbone.embed_dim) {
    throw DimensionError("feature_similarity: models differ in embedding width");
  }
  return mean_cosine(dataset_features(before, dataset), dataset_features(after, dataset));
}

BiasReport bias_report(std::span<const std::size_t> predictions, const GcdSplit& split) {
  if (predictions.empty()) throw DegenerateInputError("bias_report of zero predictions");
  BiasReport r;
  r.class_order = split.seen_classes;
  r.num_seen = split.seen_classes.size();
  r.class_order.insert(r.class_order.end(), split.novel_classes.begin(), split.novel_classes.end());
  std::vector<double> counts(split.num_classes, 0.0);
  std::size_t seen = 0;
  for (std::size_t p : predictions) {
    if (p >= split.num_classes) throw ProtocolError("bias_report: label " + std::to_string(p) + " out of range");
    counts[p] += 1.0;
    if (split.is_seen(p)) ++seen;
  }
  const double n = static_cast<double>(predictions.size());
  r.predicted_seen_ratio = static_cast<double>(seen) / n;
  for (std::size_t c : r.class_order) r.class_mass.push_back(counts[c] / n);
  return r;
}

BiasReport bias_report(const GcdModel& model, const Dataset& dataset, const GcdSplit& split) {
  return bias_report(predict_classes(model, dataset_features(model, dataset)), split);
}

ModelEvaluation evaluate_model(const GcdModel& model, const Dataset& dataset, const GcdSplit& split,
                               std::uint64_t kmeans_seed) {
  SparsityProbe probe;
  Tensor all = dataset_features(model, dataset, {}, &probe);
  const auto pred_all = predict_classes(model, all);
  Tensor unl = select_rows(all, split.unlabeled);
  std::vector<std::size_t> pred_u, truth_u;
  for (std::size_t id : split.unlabeled) {
    pred_u.push_back(pred_all[id]);
    truth_u.push_back(split.truth[id]);
  }
  ModelEvaluation ev;
  ev.prototypes = gcd_accuracy(pred_u, split);
  const auto km = kmeans(unl, split.num_classes, kmeans_seed);
  ev.kmeans_acc_all = cluster_accuracy(km.labels, truth_u, split.num_classes, split.num_classes);
  ev.bias = bias_report(pred_all, split);
  ev.adapter_sparsity = probe.fraction();
  return ev;
}

std::string report_json(const ModelEvaluation& eval) {
  nlohmann::json j = {{"acc_all", eval.prototypes.acc_all},
                      {"acc_seen", eval.prototypes.acc_seen},
                      {"acc_novel", eval.prototypes.acc_novel},
                      {"count_all", eval.prototypes.count_all},
                      {"count_seen", eval.prototypes.count_seen},
                      {"count_novel", eval.prototypes.count_novel},
                      {"predicted_seen_ratio_unlabeled", eval.prototypes.predicted_seen_ratio},
                      {"mapping", eval.prototypes.mapping},
                      {"kmeans_acc_all", eval.kmeans_acc_all},
                      {"predicted_seen_ratio", eval.bias.predicted_seen_ratio},
                      {"class_order", eval.bias.class_order},
                      {"class_mass", eval.bias.class_mass},
                      {"adapter_sparsity", eval.adapter_sparsity}};
  return j.dump(2) + "\n";
}

std::string report_text(const ModelEvaluation& eval) {
  std::string out;
  const auto line = [&](std::string_view key, double value) { out += fmt::format("{:<24}{:>10.4f}\n", key, value); };
  line("acc_all", eval.prototypes.acc_all);
  line("acc_seen", eval.prototypes.acc_seen);
  line("acc_novel", eval.prototypes.acc_novel);
  line("kmeans_acc_all", eval.kmeans_acc_all);
  line("predicted_seen_ratio", eval.bias.predicted_seen_ratio);
  line("adapter_sparsity", eval.adapter_sparsity);
  out += fmt::format("{:<24}{:>10}\n", "unlabeled samples", eval.prototypes.count_all);
  return out;
}

std::string class_mass_csv(const BiasReport& bias) {
  std::string out = "rank,class,group,mass\n";
  for (std::size_t i = 0; i < bias.class_order.size(); ++i) {
    out += fmt::format("{},{},{},{}\n", i, bias.class_order[i], i < bias.num_seen ? "seen" : "novel",
                       bias.class_mass[i]);
  }
  return out;
}

}  // namespace lagcd
