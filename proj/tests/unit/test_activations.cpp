// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lagcd/activations.hpp"
#include "lagcd/errors.hpp"
#include "test_util.hpp"

using namespace lagcd;
using lagcd::testing::random_tensor;

TEST(Activation, ParseRoundTrip) {
  for (const char* text : {"linear", "relu", "leaky_relu:0.5", "threshold_relu:-1", "elu:2", "sigmoid", "tanh",
                           "swish", "gelu"}) {
    EXPECT_EQ(Activation::parse(text).to_string(), text);
  }
  EXPECT_EQ(Activation::parse("leaky_relu:0.01"), Activation::leaky_relu(0.01));
}

TEST(Activation, ParseRejectsBadInput) {
  EXPECT_THROW(Activation::parse("softplus"), ConfigError);
  EXPECT_THROW(Activation::parse("leaky_relu"), ConfigError);
  EXPECT_THROW(Activation::parse("relu:1"), ConfigError);
  EXPECT_THROW(Activation::parse("leaky_relu:1.5"), ConfigError);
  EXPECT_THROW(Activation::parse("elu:-1"), ConfigError);
  EXPECT_THROW(Activation::parse("elu:abc"), ConfigError);
}

TEST(Activation, HandValues) {
  EXPECT_EQ(Activation::leaky_relu(0.1).value(-2.0), -0.2);
  EXPECT_EQ(Activation::threshold_relu(1.0).value(0.5), 0.0);
  EXPECT_EQ(Activation::threshold_relu(1.0).value(1.5), 1.5);
  EXPECT_EQ(Activation::threshold_relu(-1.0).value(-0.5), -0.5);
  EXPECT_NEAR(Activation::elu(2.0).value(-1.0), 2.0 * (std::exp(-1.0) - 1.0), 1e-15);
  EXPECT_NEAR(Activation::sigmoid().value(0.0), 0.5, 1e-15);
  EXPECT_NEAR(Activation::swish().value(1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(Activation::gelu().value(1.0), 0.8413447460685429, 1e-12);
  EXPECT_EQ(Activation::relu().value(-3.0), 0.0);
}

TEST(Activation, DerivativeMatchesFiniteDifferenceAwayFromKink) {
  const Activation kinds[] = {Activation::linear(),           Activation::relu(),    Activation::leaky_relu(0.3),
                              Activation::threshold_relu(1.0), Activation::elu(2.0),  Activation::sigmoid(),
                              Activation::tanh(),              Activation::swish(),   Activation::gelu()};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (const auto& a : kinds) {
    for (int i = 0; i < 200; ++i) {
      const double x = u(rng);
      if (a.has_kink() && std::abs(x - a.kink()) < 1e-3) continue;
      const double h = 1e-6;
      const double fd = (a.value(x + h) - a.value(x - h)) / (2 * h);
      EXPECT_NEAR(a.derivative(x), fd, 1e-6) << a.to_string() << " at " << x;
    }
  }
}

TEST(Activation, KinkUsesRightLimit) {
  EXPECT_EQ(Activation::relu().derivative(0.0), 1.0);
  EXPECT_EQ(Activation::threshold_relu(2.0).derivative(2.0), 1.0);
  EXPECT_EQ(Activation::leaky_relu(0.2).derivative(0.0), 1.0);
}

TEST(Activation, LimitEquivalencesOverManyTensors) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    Tensor x = random_tensor({4, 5}, rng, 3.0);
    x.mutable_data()[0] = 0.0;
    const auto report = limit_equivalences(x);
    ASSERT_TRUE(report.all_hold()) << report.failures().front();
  }
}

TEST(Activation, EquivalenceDetectsDifference) {
  Tensor x({1, 2}, {-1.0, 1.0});
  EXPECT_FALSE(check_equivalence(Activation::relu(), Activation::linear(), x).holds);
  EXPECT_DOUBLE_EQ(check_equivalence(Activation::relu(), Activation::linear(), x).max_deviation, 1.0);
}

TEST(Activation, ApplyGradient) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({3, 4}, rng);
  for (const auto& a : {Activation::gelu(), Activation::elu(1.5), Activation::swish(), Activation::tanh()}) {
    EXPECT_LT(grad_check([&](const Tensor& v) { return sum(mul(apply(a, v), v)); }, x), 1e-5) << a.to_string();
  }
}

TEST(Activation, ApplyRejectsNonFinite) {
  Tensor x({1, 2}, {1.0, std::nan("")});
  EXPECT_THROW(apply(Activation::relu(), x), NumericError);
}

TEST(Sparsity, CountsExactZeros) {
  Tensor x({1, 4}, {0.0, 1.0, -0.0, 2.0});
  EXPECT_DOUBLE_EQ(sparsity(x), 0.5);
  EXPECT_DOUBLE_EQ(sparsity(apply(Activation::relu(), Tensor({1, 4}, {-1, -2, 3, -4}))), 0.75);
  EXPECT_EQ(sparsity(apply(Activation::linear(), Tensor({1, 2}, {-1, 2}))), 0.0);
  EXPECT_THROW(sparsity(Tensor({0}, {})), DegenerateInputError);
}
