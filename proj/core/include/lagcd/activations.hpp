// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lagcd/tensor.hpp"

namespace lagcd {

enum class ActivationTag { Linear, ReLU, LeakyReLU, ThresholdReLU, ELU, Sigmoid, Tanh, Swish, GeLU };

/// One of the adapter activations, with its parameter where the family has one:
/// LeakyReLU slope alpha in [0, 1], ThresholdReLU threshold t, ELU saturation beta >= 0.
///
/// Textual form is the lowercase tag with an optional `:param`, e.g.
/// `leaky_relu:0.5`, `threshold_relu:-1`, `elu:2`, `linear`.
class Activation {
 public:
  Activation() = default;

  static Activation linear() { return Activation(ActivationTag::Linear, std::nullopt); }
  static Activation relu() { return Activation(ActivationTag::ReLU, std::nullopt); }
  static Activation leaky_relu(double alpha);
  static Activation threshold_relu(double threshold);
  static Activation elu(double beta);
  static Activation sigmoid() { return Activation(ActivationTag::Sigmoid, std::nullopt); }
  static Activation tanh() { return Activation(ActivationTag::Tanh, std::nullopt); }
  static Activation swish() { return Activation(ActivationTag::Swish, std::nullopt); }
  static Activation gelu() { return Activation(ActivationTag::GeLU, std::nullopt); }

  /// Throws ConfigError on unknown tags, missing/extra parameters, or
  /// parameters outside the family's range.
  static Activation parse(std::string_view text);
  std::string to_string() const;

  ActivationTag tag() const { return tag_; }
  std::optional<double> parameter() const { return parameter_; }

  double value(double x) const;
  /// Exact derivative. At the ReLU-family kink (x == 0, or x == t) this is the
  /// right limit, 1.
  double derivative(double x) const;
  bool is_monotonic() const;
  /// ReLU-family members whose derivative jumps at `kink()`.
  bool has_kink() const;
  double kink() const;

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  Activation(ActivationTag tag, std::optional<double> parameter) : tag_(tag), parameter_(parameter) {}

  ActivationTag tag_ = ActivationTag::Linear;
  std::optional<double> parameter_;
};

/// Elementwise activation recorded on the tape. Non-finite input throws NumericError.
Tensor apply(const Activation& kind, const Tensor& x);

/// Fraction of entries with |v| <= 1e-12. Empty tensor throws DegenerateInputError.
double sparsity(const Tensor& x);

struct EquivalenceCheck {
  std::string name;
  double max_deviation = 0.0;
  bool holds = false;
};

struct EquivalenceReport {
  std::vector<EquivalenceCheck> checks;
  bool all_hold() const;
  /// Names of the violated equivalences.
  std::vector<std::string> failures() const;
};

/// Elementwise comparison of two activations on `x` within `tol`.
EquivalenceCheck check_equivalence(const Activation& a, const Activation& b, const Tensor& x, double tol = 1e-12);

/// LeakyReLU(0)=ReLU, LeakyReLU(1)=Linear, ThresholdReLU(0)=ReLU, ELU(0)=ReLU on `x`.
EquivalenceReport limit_equivalences(const Tensor& x, double tol = 1e-12);

}  // namespace lagcd
