// SPDX-License-Identifier: Apache-2.0
#include "lagcd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lagcd/errors.hpp"

namespace lagcd {

ContrastiveMode parse_contrastive_mode(std::string_view text) {
  if (text == "standard") return ContrastiveMode::Standard;
  if (text == "as_written" || text == "as-written") return ContrastiveMode::AsWritten;
  throw ConfigError("unknown contrastive mode '" + std::string(text) + "' (expected standard or as-written)");
}

std::string to_string(ContrastiveMode mode) {
  return mode == ContrastiveMode::Standard ? "standard" : "as_written";
}

void LossWeights::validate() const {
  if (!(lambda_sup >= 0.0 && lambda_sup <= 1.0)) throw ConfigError("lambda_sup must lie in [0, 1]");
  if (!(lambda_ent >= 0.0) || !std::isfinite(lambda_ent)) throw ConfigError("lambda_ent must be finite and >= 0");
  for (double t : {tau_u, tau_c, tau_s}) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("loss temperatures must be finite and positive");
  }
  if (!(s_d >= 0.0) || !std::isfinite(s_d)) throw ConfigError("s_d must be finite and >= 0");
}

namespace {

void require_rows_normalized(const Tensor& p, const char* what) {
  const std::size_t r = p.rows(), c = p.cols();
  const auto v = p.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j];
    if (std::abs(s - 1.0) > 1e-6) {
      throw PreconditionError(std::string(what) + ": row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

Tensor identity_weights(std::size_t n, double w) {
  Tensor t = Tensor::zeros({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = w;
  return t;
}

}  // namespace

Tensor self_sup_contrastive(const Tensor& z, const Tensor& z2, double tau, ContrastiveMode mode) {
  if (z.shape() != z2.shape() || z.rank() != 2) {
    throw DimensionError("self_sup_contrastive: views " + shape_str(z.shape()) + " vs " + shape_str(z2.shape()));
  }
  const std::size_t b = z.rows();
  if (b < 2) throw DegenerateInputError("self_sup_contrastive needs at least 2 samples");
  if (!(tau > 0.0)) throw PreconditionError("self_sup_contrastive: temperature must be positive");
  Tensor s = scale(matmul(z, transpose(z2)), 1.0 / tau);
  std::vector<std::uint8_t> mask;
  if (mode == ContrastiveMode::AsWritten) {
    mask.assign(b * b, 1);
    for (std::size_t i = 0; i < b; ++i) mask[i * b + i] = 0;
  }
  Tensor lse = logsumexp_rows(s, mask);
  Tensor positives = sum(mul(s, identity_weights(b, 1.0)));
  return scale(sub(sum(lse), positives), 1.0 / static_cast<double>(b));
}

Tensor sup_contrastive(const Tensor& z, std::span<const std::size_t> labels, double tau) {
  if (z.rank() != 2 || labels.size() != z.rows()) {
    throw DimensionError("sup_contrastive: " + std::to_string(labels.size()) + " labels for " + shape_str(z.shape()));
  }
  if (!(tau > 0.0)) throw PreconditionError("sup_contrastive: temperature must be positive");
  const std::size_t n = z.rows();
  std::vector<std::size_t> positives(n, 0);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) ++positives[i];
    if (positives[i] > 0) ++anchors;
  }
  if (anchors == 0) throw DegenerateInputError("sup_contrastive: no anchor has a positive");

  const double inv_anchors = 1.0 / static_cast<double>(anchors);
  std::vector<std::uint8_t> others(n * n, 1);
  Tensor anchor_w = Tensor::zeros({n});
  Tensor pos_w = Tensor::zeros({n, n});
  auto aw = anchor_w.mutable_data();
  auto pw = pos_w.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    others[i * n + i] = 0;
    if (positives[i] == 0) continue;
    aw[i] = inv_anchors;
    const double w = inv_anchors / static_cast<double>(positives[i]);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) pw[i * n + j] = w;
  }
  Tensor s = scale(matmul(z, transpose(z)), 1.0 / tau);
  Tensor lse = logsumexp_rows(s, others);
  return sub(sum(mul(lse, anchor_w)), sum(mul(s, pos_w)));
}

Tensor soft_cross_entropy(const Tensor& q, const Tensor& p) {
  if (q.shape() != p.shape() || p.rank() != 2) {
    throw DimensionError("cross-entropy: target " + shape_str(q.shape()) + " vs prediction " + shape_str(p.shape()));
  }
  if (p.rows() == 0) throw DegenerateInputError("cross-entropy over zero rows");
  return scale(sum(mul(q, log(p, kProbFloor))), -1.0 / static_cast<double>(p.rows()));
}

Tensor align_loss(const Tensor& q, const Tensor& p, std::span<const double> pi) {
  if (q.shape() != p.shape() || p.rank() != 2 || pi.size() != p.cols()) {
    throw DimensionError("align_loss: target " + shape_str(q.shape()) + ", prediction " + shape_str(p.shape()) +
                         ", pi of length " + std::to_string(pi.size()));
  }
  for (double v : pi)
    if (!std::isfinite(v)) throw NumericError("align_loss: non-finite alignment vector");
  if (p.rows() == 0) throw DegenerateInputError("align_loss over zero rows");
  if (std::all_of(pi.begin(), pi.end(), [](double v) { return v == 0.0; })) return soft_cross_entropy(q, p);
  Tensor shifted = add_bias(p, Tensor({pi.size()}, std::vector<double>(pi.begin(), pi.end())));
  return scale(sum(mul(q, log(shifted, kProbFloor))), -1.0 / static_cast<double>(p.rows()));
}

Tensor mean_entropy(const Tensor& p, const Tensor& p2) {
  const Tensor parts[] = {p, p2};
  Tensor m = mean_rows(concat_rows(parts));
  return scale(sum(mul(m, log(m, kProbFloor))), -1.0);
}

ClsLosses cls_losses(const Tensor& p, const Tensor& p2, const Tensor& teacher, std::span<const std::uint8_t> labeled_mask,
                     std::span<const std::size_t> labels, double lambda_ent, std::span<const double> pi) {
  if (p.shape() != p2.shape() || p.shape() != teacher.shape() || p.rank() != 2) {
    throw DimensionError("cls_losses: p " + shape_str(p.shape()) + ", p' " + shape_str(p2.shape()) + ", q' " +
                         shape_str(teacher.shape()));
  }
  if (labeled_mask.size() != p.rows() || labels.size() != p.rows()) {
    throw DimensionError("cls_losses: mask/labels length does not match " + std::to_string(p.rows()) + " rows");
  }
  require_rows_normalized(p, "cls_losses p");
  require_rows_normalized(p2, "cls_losses p'");
  require_rows_normalized(teacher, "cls_losses q'");

  const std::size_t k = p.cols();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < p.rows(); ++i)
    if (labeled_mask[i]) rows.push_back(i);

  ClsLosses out;
  if (rows.empty()) {
    out.supervised = Tensor::scalar(0.0);
  } else {
    Tensor onehot = Tensor::zeros({rows.size(), k});
    auto oh = onehot.mutable_data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t y = labels[rows[r]];
      if (y >= k) throw PreconditionError("cls_losses: label " + std::to_string(y) + " out of range");
      oh[r * k + y] = 1.0;
    }
    out.supervised = soft_cross_entropy(onehot, select_rows(p, rows));
  }
  Tensor distill = pi.empty() ? soft_cross_entropy(teacher, p) : align_loss(teacher, p, pi);
  out.unsupervised = sub(distill, scale(mean_entropy(p, p2), lambda_ent));
  return out;
}

std::vector<double> normalized_mass(const Tensor& probs) {
  const std::size_t r = probs.rows(), c = probs.cols();
  if (r == 0) throw DegenerateInputError("normalized_mass of zero rows");
  std::vector<double> mass(c, 0.0);
  const auto v = probs.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mass[j] += v[i * c + j];
  double total = 0.0;
  for (double m : mass) total += m;
  for (auto& m : mass) m /= total;
  return mass;
}

std::vector<double> estimate_pi_v(const GcdModel& model, const Dataset& dataset, double tau_s, std::size_t chunk) {
  if (dataset.size() == 0) throw DegenerateInputError("estimate_pi_v on an empty dataset");
  if (chunk == 0) chunk = dataset.size();
  Tape::Pause pause;
  ForwardContext ctx;
  const std::size_t k = model.config().head.num_classes;
  std::vector<double> mass(k, 0.0);
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    ids.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + chunk); ++i) ids.push_back(i);
    const auto tokens = dataset.gather(ids);
    Tensor probs = prototype_probs(model.prototypes(), model.features(tokens, ids.size(), ctx), tau_s);
    const auto v = probs.data();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < k; ++j) mass[j] += v[i * k + j];
  }
  double total = 0.0;
  for (double m : mass) total += m;
  for (auto& m : mass) m /= total;
  return mass;
}

std::vector<double> alignment_vector(std::span<const double> pi_v, std::span<const double> pi_b, double s_d) {
  if (pi_v.size() != pi_b.size()) throw DimensionError("alignment_vector: pi_v and pi_b differ in length");
  std::vector<double> pi(pi_v.size());
  for (std::size_t k = 0; k < pi.size(); ++k) {
    if (!(pi_b[k] > 0.0)) throw PreconditionError("alignment_vector: prior entries must be positive");
    pi[k] = s_d * std::log(std::max(pi_v[k], kProbFloor) / pi_b[k]);
  }
  return pi;
}

std::vector<double> uniform_prior(std::size_t k) {
  if (k == 0) throw DegenerateInputError("uniform prior over zero classes");
  return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

double LossBreakdown::recombined() const {
  return (rep_unsup + cls_unsup) * (1.0 - lambda_sup) + (rep_sup + cls_sup) * lambda_sup;
}

Tensor combine_losses(const Tensor& rep_unsup, const Tensor& rep_sup, const Tensor& cls_unsup, const Tensor& cls_sup,
                      double lambda_sup) {
  return add(scale(add(rep_unsup, cls_unsup), 1.0 - lambda_sup), scale(add(rep_sup, cls_sup), lambda_sup));
}

LossBreakdown total_loss(const GcdModel& model, const Batch& batch, const LossWeights& weights,
                         std::span<const double> pi, const LossOptions& options, ForwardContext& ctx) {
  const std::size_t b = batch.size;
  if (b < 2) throw DegenerateInputError("total_loss needs at least 2 samples per batch");
  if (batch.labeled_mask.size() != b || batch.labels.size() != b) {
    throw DimensionError("total_loss: batch mask/labels do not match its size");
  }
  std::vector<double> tokens(batch.view1);
  tokens.insert(tokens.end(), batch.view2.begin(), batch.view2.end());
  Tensor h = model.features(tokens, 2 * b, ctx);
  Tensor z = model.project(h);
  Tensor cos = prototype_cosine(model.prototypes(), h);

  std::vector<std::size_t> first(b), second(b), labeled;
  std::vector<std::size_t> sup_labels;
  for (std::size_t i = 0; i < b; ++i) {
    first[i] = i;
    second[i] = b + i;
    if (batch.labeled_mask[i]) labeled.push_back(i);
  }
  Tensor z1 = select_rows(z, first), z2 = select_rows(z, second);
  Tensor cos1 = select_rows(cos, first), cos2 = select_rows(cos, second);
  Tensor p = softmax(scale(cos1, 1.0 / weights.tau_s));
  Tensor p2 = softmax(scale(cos2, 1.0 / weights.tau_s));
  Tensor teacher = softmax(scale(cos2.detach(), 1.0 / options.teacher_temp));

  Tensor rep_unsup = self_sup_contrastive(z1, z2, weights.tau_u, options.contrastive_mode);
  Tensor rep_sup = Tensor::scalar(0.0);
  if (!labeled.empty()) {
    std::vector<std::size_t> rows;
    for (std::size_t i : labeled) rows.push_back(i);
    for (std::size_t i : labeled) rows.push_back(b + i);
    for (std::size_t r : rows) sup_labels.push_back(batch.labels[r % b]);
    rep_sup = sup_contrastive(select_rows(z, rows), sup_labels, weights.tau_c);
  }

  ClsLosses cls;
  if (options.logit_da && !pi.empty()) {
    cls = cls_losses(p, p2, teacher, batch.labeled_mask, batch.labels, weights.lambda_ent);
    Tensor shifted = softmax(add_bias(scale(cos1, 1.0 / weights.tau_s),
                                      Tensor({pi.size()}, std::vector<double>(pi.begin(), pi.end()))));
    cls.unsupervised =
        sub(soft_cross_entropy(teacher, shifted), scale(mean_entropy(p, p2), weights.lambda_ent));
  } else {
    cls = cls_losses(p, p2, teacher, batch.labeled_mask, batch.labels, weights.lambda_ent, pi);
  }

  LossBreakdown out;
  out.lambda_sup = weights.lambda_sup;
  out.rep_unsup = rep_unsup.item();
  out.rep_sup = rep_sup.item();
  out.cls_unsup = cls.unsupervised.item();
  out.cls_sup = cls.supervised.item();
  out.total = combine_losses(rep_unsup, rep_sup, cls.unsupervised, cls.supervised, weights.lambda_sup);
  return out;
}

}  // namespace lagcd
