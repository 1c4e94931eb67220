// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lagcd/errors.hpp"
#include "lagcd/tensor.hpp"
#include "test_util.hpp"

using namespace lagcd;
using lagcd::testing::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
  Tensor a({1, 2}, {1, 2}), b({2, 1}, {3, 4});
  EXPECT_EQ(matmul(a, b).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  EXPECT_LT(grad_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a), 1e-5);
  EXPECT_LT(grad_check([&](const Tensor& x) { return sum(matmul(a, x)); }, b), 1e-5);
}

TEST(LayerNorm, ConstantAndSymmetricRows) {
  Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
  Tensor y = layer_norm(Tensor({1, 3}, {1, 1, 1}), g, b);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor y2 = layer_norm(Tensor({1, 2}, {-1, 1}), g2, b2, 1e-14);
  EXPECT_NEAR(y2.data()[0], -1.0, 1e-12);
  EXPECT_NEAR(y2.data()[1], 1.0, 1e-12);
}

TEST(LayerNorm, ZeroWidthRejected) {
  EXPECT_THROW(layer_norm(Tensor({2, 0}, {}), Tensor({0}, {}), Tensor({0}, {})), DimensionError);
}

TEST(Softmax, SymmetryAndStability) {
  Tensor p = softmax(Tensor({1, 3}, {0, 0, 0}));
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor q = softmax(Tensor({1, 2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(q.data()[0]));
  EXPECT_NEAR(q.data()[0], 1.0, 1e-15);
  EXPECT_NEAR(q.data()[1], 0.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(2);
  Tensor p = softmax(random_tensor({5, 7}, rng, 5.0));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += p.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(L2Normalize, KnownValuesAndIdempotence) {
  Tensor y = l2_normalize(Tensor({1, 2}, {3, 4}));
  EXPECT_NEAR(y.data()[0], 0.6, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.8, 1e-15);
  Tensor u = l2_normalize(Tensor({1, 2}, {0.6, 0.8}));
  EXPECT_NEAR(u.data()[0], 0.6, 1e-15);
  EXPECT_THROW(l2_normalize(Tensor({1, 2}, {0, 0})), DegenerateInputError);
}

TEST(GradCheck, ExactQuadraticAndConstant) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({4, 3}, rng);
  EXPECT_LT(grad_check([](const Tensor& v) { return sum(mul(v, v)); }, x), 1e-6);
  EXPECT_EQ(grad_check([](const Tensor&) { return Tensor::scalar(2.5); }, x), 0.0);
}

// Every differentiable op against central differences over 100 seeds.
TEST(GradCheck, EveryOpOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({5, 4}, rng);
    Tensor bias = random_tensor({5}, rng);
    Tensor g = random_tensor({4}, rng);
    Tensor b4 = random_tensor({4}, rng);
    Tensor pos = Tensor({3, 4}, std::vector<double>(12));
    for (std::size_t i = 0; i < 12; ++i) pos.mutable_data()[i] = 0.5 + std::abs(x.data()[i]);
    Tensor weights = random_tensor({3, 4}, rng);

    const auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, const Tensor& at) {
      const double err = grad_check(f, at);
      EXPECT_LT(err, 1e-4) << name << " seed " << seed;
    };
    check("add", [&](const Tensor& v) { return sum(mul(add(v, y), weights)); }, x);
    check("sub", [&](const Tensor& v) { return sum(mul(sub(y, v), weights)); }, x);
    check("mul", [&](const Tensor& v) { return sum(mul(mul(v, y), weights)); }, x);
    check("scale", [&](const Tensor& v) { return sum(mul(scale(v, -1.7), weights)); }, x);
    check("add_bias", [&](const Tensor& v) { return sum(mul(add_bias(x, v), weights)); }, b4);
    check("mean", [&](const Tensor& v) { return mean(mul(v, v)); }, x);
    check("mean_rows", [&](const Tensor& v) { return sum(mul(mean_rows(v), mean_rows(weights))); }, x);
    check("log", [&](const Tensor& v) { return sum(mul(log(v), weights)); }, pos);
    check("exp", [&](const Tensor& v) { return sum(mul(exp(v), weights)); }, x);
    check("transpose", [&](const Tensor& v) { return sum(mul(transpose(v), transpose(weights))); }, x);
    check("linear.x", [&](const Tensor& v) { return sum(mul(linear(v, w, bias), linear(y, w, bias))); }, x);
    check("linear.w", [&](const Tensor& v) { return sum(mul(linear(x, v, bias), linear(y, w, bias))); }, w);
    check("linear.b", [&](const Tensor& v) { return sum(mul(linear(x, w, v), linear(y, w, bias))); }, bias);
    check("layer_norm.x", [&](const Tensor& v) { return sum(mul(layer_norm(v, g, b4), weights)); }, x);
    check("layer_norm.g", [&](const Tensor& v) { return sum(mul(layer_norm(x, v, b4), weights)); }, g);
    check("layer_norm.b", [&](const Tensor& v) { return sum(mul(layer_norm(x, g, v), weights)); }, b4);
    check("softmax", [&](const Tensor& v) { return sum(mul(softmax(v), weights)); }, x);
    check("log_softmax", [&](const Tensor& v) { return sum(mul(log_softmax(v), weights)); }, x);
    check("logsumexp", [&](const Tensor& v) { return sum(mul(logsumexp_rows(v), Tensor({3}, {1.0, -0.5, 2.0}))); }, x);
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0};
    check("logsumexp.mask", [&](const Tensor& v) { return sum(logsumexp_rows(v, mask)); }, x);
    check("l2_normalize", [&](const Tensor& v) { return sum(mul(l2_normalize(v), weights)); }, x);
    const std::vector<std::size_t> rows{2, 0, 2};
    check("select_rows", [&](const Tensor& v) { return sum(mul(select_rows(v, rows), weights)); }, x);
    check("concat_rows", [&](const Tensor& v) {
      const Tensor parts[] = {v, y};
      return sum(mul(concat_rows(parts), concat_rows(std::vector<Tensor>{weights, weights})));
    }, x);
    check("reshape", [&](const Tensor& v) { return sum(mul(reshape(v, {4, 3}), reshape(weights, {4, 3}))); }, x);
    check("elementwise", [&](const Tensor& v) {
      return sum(mul(map_elementwise(v, [](double a) { return std::sin(a); }, [](double a) { return std::cos(a); }),
                     weights));
    }, x);
  }
}

TEST(GradCheck, AttentionAllInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t batch = 2, seq = 3, heads = 2, d = 4;
    Tensor q = random_tensor({batch * seq, d}, rng), k = random_tensor({batch * seq, d}, rng);
    Tensor v = random_tensor({batch * seq, d}, rng), weights = random_tensor({batch * seq, d}, rng);
    const auto loss = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
      return sum(mul(attention(qq, kk, vv, batch, seq, heads), weights));
    };
    EXPECT_LT(grad_check([&](const Tensor& x) { return loss(x, k, v); }, q), 1e-4) << seed;
    EXPECT_LT(grad_check([&](const Tensor& x) { return loss(q, x, v); }, k), 1e-4) << seed;
    EXPECT_LT(grad_check([&](const Tensor& x) { return loss(q, k, x); }, v), 1e-4) << seed;
  }
}

TEST(Attention, MatchesHandComputedSingleHead) {
  // One sequence of two tokens, one head, width 1: scores q_i k_j.
  Tensor q({2, 1}, {1.0, 2.0}), k({2, 1}, {0.5, -1.0}), v({2, 1}, {3.0, 7.0});
  Tensor out = attention(q, k, v, 1, 2, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    const double s0 = q.data()[i] * 0.5, s1 = q.data()[i] * -1.0;
    const double p0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    EXPECT_NEAR(out.data()[i], p0 * 3.0 + (1 - p0) * 7.0, 1e-12);
  }
}

TEST(Tape, SharedInputAccumulatesGradients) {
  Tensor x({1, 2}, {1.5, -2.0}, true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = sum(add(mul(x, x), scale(x, 3.0)));
    tape.backward(loss);
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 3.0);
}

TEST(Tape, NothingRecordedWithoutGradInputs) {
  Tensor x({1, 2}, {1.0, 2.0});
  Tape tape;
  Tape::Scope scope(tape);
  (void)sum(mul(x, x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, PauseSuspendsRecording) {
  Tensor x({1, 2}, {1.0, 2.0}, true);
  Tape tape;
  Tape::Scope scope(tape);
  {
    Tape::Pause pause;
    (void)sum(x);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)sum(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tensor, OpsAreDeterministic) {
  std::mt19937_64 r1(9), r2(9);
  Tensor a = random_tensor({6, 5}, r1), b = random_tensor({6, 5}, r2);
  Tensor ya = softmax(matmul(l2_normalize(a), transpose(a)));
  Tensor yb = softmax(matmul(l2_normalize(b), transpose(b)));
  EXPECT_EQ(std::vector<double>(ya.data().begin(), ya.data().end()),
            std::vector<double>(yb.data().begin(), yb.data().end()));
}

TEST(Log, FloorClampsWithZeroGradient) {
  Tensor x({1, 2}, {0.0, 0.5}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor y = log(x, 1e-8);
  EXPECT_NEAR(y.data()[0], std::log(1e-8), 1e-15);
  tape.backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
  EXPECT_THROW(log(Tensor({1}, {0.0})), NumericError);
}

TEST(Linear, GradientsIndependentOfAllocationAddress) {
  std::mt19937_64 rng(21);
  const auto x = lagcd::testing::random_values(33 * 16, rng), w = lagcd::testing::random_values(24 * 16, rng),
             b = lagcd::testing::random_values(24, rng);
  std::vector<double> reference;
  for (int trial = 0; trial < 16; ++trial) {
    std::vector<std::vector<double>> padding;
    for (int j = 0; j < trial; ++j) padding.emplace_back(static_cast<std::size_t>(j % 5 + 1));
    Tensor xt({33, 16}, x, true), wt({24, 16}, w, true), bt({24}, b, true);
    {
      Tape tape;
      Tape::Scope s(tape);
      Tensor y = linear(xt, wt, bt);
      tape.backward(sum(mul(y, y)));
    }
    std::vector<double> grads(xt.grad().begin(), xt.grad().end());
    grads.insert(grads.end(), wt.grad().begin(), wt.grad().end());
    grads.insert(grads.end(), bt.grad().begin(), bt.grad().end());
    if (trial == 0) reference = grads;
    ASSERT_EQ(grads, reference) << "trial " << trial;
  }
}
