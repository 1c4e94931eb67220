// SPDX-License-Identifier: Apache-2.0
//
// Contrastive representation losses, self-distillation classification losses
// with mean-entropy regularization, and distribution alignment.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lagcd/data.hpp"
#include "lagcd/model.hpp"
#include "lagcd/tensor.hpp"

namespace lagcd {

/// Lower clamp applied inside every log of a probability.
inline constexpr double kProbFloor = 1e-8;

enum class ContrastiveMode {
  Standard,   // positive pair included in the denominator
  AsWritten,  // denominator over n != i only
};
ContrastiveMode parse_contrastive_mode(std::string_view text);
std::string to_string(ContrastiveMode mode);

struct LossWeights {
  double lambda_sup = 0.35;
  double lambda_ent = 1.0;
  double tau_u = 1.0;   // self-supervised contrastive
  double tau_c = 0.07;  // supervised contrastive
  double tau_s = 0.1;   // student
  double s_d = 0.2;     // alignment strength

  void validate() const;
};

/// Mean over anchors i of -log(exp(z_i.z'_i / tau) / sum_n exp(z_i.z'_n / tau)).
Tensor self_sup_contrastive(const Tensor& z, const Tensor& z2, double tau, ContrastiveMode mode);

/// Supervised contrastive loss over the rows of z: per anchor, the mean over its
/// same-label positives of -log(exp(s_ip) / sum_{a != i} exp(s_ia)), averaged over
/// anchors that have at least one positive.
Tensor sup_contrastive(const Tensor& z, std::span<const std::size_t> labels, double tau);

/// Mean over rows of -sum_k q^(k) log(max(p^(k), 1e-8)).
Tensor soft_cross_entropy(const Tensor& q, const Tensor& p);

/// Mean over rows of -sum_k q^(k) log(max(p^(k) + pi^(k), 1e-8)).
Tensor align_loss(const Tensor& q, const Tensor& p, std::span<const double> pi);

/// -sum_k m_k log(m_k) of the mean row of p and p2 stacked.
Tensor mean_entropy(const Tensor& p, const Tensor& p2);

struct ClsLosses {
  Tensor supervised;    // cross-entropy on labeled rows of p
  Tensor unsupervised;  // self-distillation minus lambda_ent * H(mean p)
};

/// `teacher` must already be detached. With a non-empty `pi` the distillation
/// term uses the alignment loss. `labels` is indexed by row and read where
/// labeled_mask is set; with no labeled rows the supervised loss is 0.
ClsLosses cls_losses(const Tensor& p, const Tensor& p2, const Tensor& teacher, std::span<const std::uint8_t> labeled_mask,
                     std::span<const std::size_t> labels, double lambda_ent, std::span<const double> pi = {});

/// Normalized sum of probability rows.
std::vector<double> normalized_mass(const Tensor& probs);

/// Normalize(sum_i p_i) over every sample of the dataset, unaugmented, at tau_s.
std::vector<double> estimate_pi_v(const GcdModel& model, const Dataset& dataset, double tau_s,
                                  std::size_t chunk = 250);

/// s_d * log(max(pi_v, 1e-8) / pi_b).
std::vector<double> alignment_vector(std::span<const double> pi_v, std::span<const double> pi_b, double s_d);
std::vector<double> uniform_prior(std::size_t k);

struct LossOptions {
  ContrastiveMode contrastive_mode = ContrastiveMode::Standard;
  double teacher_temp = 0.07;
  /// Add pi to the student logits instead of the probabilities.
  bool logit_da = false;
};

struct LossBreakdown {
  Tensor total;
  double rep_unsup = 0.0;
  double rep_sup = 0.0;
  double cls_unsup = 0.0;
  double cls_sup = 0.0;
  double lambda_sup = 0.0;

  /// (1 - lambda)(rep_unsup + cls_unsup) + lambda (rep_sup + cls_sup)
  double recombined() const;
};

/// Components combined as (1 - lambda)(L^u_rep + L^u_cls) + lambda (L^s_rep + L^s_cls).
Tensor combine_losses(const Tensor& rep_unsup, const Tensor& rep_sup, const Tensor& cls_unsup, const Tensor& cls_sup,
                      double lambda_sup);

/// Forward pass of both views and all four loss components. An empty `pi`
/// means no alignment.
LossBreakdown total_loss(const GcdModel& model, const Batch& batch, const LossWeights& weights,
                         std::span<const double> pi, const LossOptions& options, ForwardContext& ctx);

}  // namespace lagcd
