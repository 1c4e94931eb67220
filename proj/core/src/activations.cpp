// SPDX-License-Identifier: Apache-2.0
#include "lagcd/activations.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

#include "lagcd/errors.hpp"

namespace lagcd {

namespace {

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double parse_number(std::string_view text, std::string_view whole) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("activation '" + std::string(whole) + "': bad parameter '" + std::string(text) + "'");
  }
  return v;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Activation Activation::leaky_relu(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("leaky_relu slope must lie in [0, 1]");
  return Activation(ActivationTag::LeakyReLU, alpha);
}

Activation Activation::threshold_relu(double threshold) {
  if (!std::isfinite(threshold)) throw ConfigError("threshold_relu threshold must be finite");
  return Activation(ActivationTag::ThresholdReLU, threshold);
}

Activation Activation::elu(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("elu beta must be finite and >= 0");
  return Activation(ActivationTag::ELU, beta);
}

Activation Activation::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const bool has_param = colon != std::string_view::npos;
  const auto param = [&] {
    if (!has_param) throw ConfigError("activation '" + std::string(text) + "' requires a parameter");
    return parse_number(text.substr(colon + 1), text);
  };
  const auto no_param = [&](Activation a) {
    if (has_param) throw ConfigError("activation '" + std::string(name) + "' takes no parameter");
    return a;
  };
  if (name == "linear") return no_param(linear());
  if (name == "relu") return no_param(relu());
  if (name == "sigmoid") return no_param(sigmoid());
  if (name == "tanh") return no_param(tanh());
  if (name == "swish") return no_param(swish());
  if (name == "gelu") return no_param(gelu());
  if (name == "leaky_relu") return leaky_relu(param());
  if (name == "threshold_relu") return threshold_relu(param());
  if (name == "elu") return elu(param());
  throw ConfigError("unknown activation '" + std::string(text) + "'");
}

std::string Activation::to_string() const {
  switch (tag_) {
    case ActivationTag::Linear: return "linear";
    case ActivationTag::ReLU: return "relu";
    case ActivationTag::LeakyReLU: return "leaky_relu:" + format_number(*parameter_);
    case ActivationTag::ThresholdReLU: return "threshold_relu:" + format_number(*parameter_);
    case ActivationTag::ELU: return "elu:" + format_number(*parameter_);
    case ActivationTag::Sigmoid: return "sigmoid";
    case ActivationTag::Tanh: return "tanh";
    case ActivationTag::Swish: return "swish";
    case ActivationTag::GeLU: return "gelu";
  }
  return "linear";
}

double Activation::value(double x) const {
  switch (tag_) {
    case ActivationTag::Linear: return x;
    case ActivationTag::ReLU: return x >= 0.0 ? x : 0.0;
    case ActivationTag::LeakyReLU: return x >= 0.0 ? x : *parameter_ * x;
    case ActivationTag::ThresholdReLU: return x >= *parameter_ ? x : 0.0;
    case ActivationTag::ELU: return x >= 0.0 ? x : *parameter_ * std::expm1(x);
    case ActivationTag::Sigmoid: return sigmoid_value(x);
    case ActivationTag::Tanh: return std::tanh(x);
    case ActivationTag::Swish: return x * sigmoid_value(x);
    case ActivationTag::GeLU: return x * normal_cdf(x);
  }
  return x;
}

double Activation::derivative(double x) const {
  switch (tag_) {
    case ActivationTag::Linear: return 1.0;
    case ActivationTag::ReLU: return x >= 0.0 ? 1.0 : 0.0;
    case ActivationTag::LeakyReLU: return x >= 0.0 ? 1.0 : *parameter_;
    case ActivationTag::ThresholdReLU: return x >= *parameter_ ? 1.0 : 0.0;
    case ActivationTag::ELU: return x >= 0.0 ? 1.0 : *parameter_ * std::exp(x);
    case ActivationTag::Sigmoid: {
      const double s = sigmoid_value(x);
      return s * (1.0 - s);
    }
    case ActivationTag::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationTag::Swish: {
      const double s = sigmoid_value(x);
      return s + x * s * (1.0 - s);
    }
    case ActivationTag::GeLU: return normal_cdf(x) + x * normal_pdf(x);
  }
  return 1.0;
}

bool Activation::is_monotonic() const { return tag_ != ActivationTag::Swish && tag_ != ActivationTag::GeLU; }

bool Activation::has_kink() const {
  switch (tag_) {
    case ActivationTag::ReLU:
    case ActivationTag::ThresholdReLU: return true;
    case ActivationTag::LeakyReLU: return *parameter_ != 1.0;
    case ActivationTag::ELU: return *parameter_ != 1.0;
    default: return false;
  }
}

double Activation::kink() const { return tag_ == ActivationTag::ThresholdReLU ? *parameter_ : 0.0; }

Tensor apply(const Activation& kind, const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("activation " + kind.to_string() + ": non-finite input");
  }
  if (kind.tag() == ActivationTag::Linear) {
    return map_elementwise(x, [](double v) { return v; }, [](double) { return 1.0; });
  }
  return map_elementwise(x, [&](double v) { return kind.value(v); }, [&](double v) { return kind.derivative(v); });
}

double sparsity(const Tensor& x) {
  if (!x.defined() || x.numel() == 0) throw DegenerateInputError("sparsity of an empty tensor");
  std::size_t zeros = 0;
  for (double v : x.data())
    if (std::abs(v) <= 1e-12) ++zeros;
  return static_cast<double>(zeros) / static_cast<double>(x.numel());
}

bool EquivalenceReport::all_hold() const {
  for (const auto& c : checks)
    if (!c.holds) return false;
  return true;
}

std::vector<std::string> EquivalenceReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.holds) out.push_back(c.name);
  return out;
}

EquivalenceCheck check_equivalence(const Activation& a, const Activation& b, const Tensor& x, double tol) {
  EquivalenceCheck check;
  check.name = a.to_string() + " == " + b.to_string();
  for (double v : x.data()) check.max_deviation = std::max(check.max_deviation, std::abs(a.value(v) - b.value(v)));
  check.holds = check.max_deviation <= tol;
  return check;
}

EquivalenceReport limit_equivalences(const Tensor& x, double tol) {
  EquivalenceReport report;
  report.checks.push_back(check_equivalence(Activation::leaky_relu(0.0), Activation::relu(), x, tol));
  report.checks.push_back(check_equivalence(Activation::leaky_relu(1.0), Activation::linear(), x, tol));
  report.checks.push_back(check_equivalence(Activation::threshold_relu(0.0), Activation::relu(), x, tol));
  report.checks.push_back(check_equivalence(Activation::elu(0.0), Activation::relu(), x, tol));
  return report;
}

}  // namespace lagcd
