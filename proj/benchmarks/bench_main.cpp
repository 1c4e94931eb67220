// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "lagcd/config.hpp"
#include "lagcd/eval.hpp"
#include "lagcd/losses.hpp"
#include "lagcd/train.hpp"

using namespace lagcd;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a({n, n}, random_values(n * n, 1)), b({n, n}, random_values(n * n, 2));
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_LinearForwardBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  Tensor x({rows, d}, random_values(rows * d, 1), true), w({d, d}, random_values(d * d, 2), true),
      b({d}, random_values(d, 3), true);
  for (auto _ : state) {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(linear(x, w, b)));
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_LinearForwardBackward)->Arg(64)->Arg(576);

void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 64, seq = 9, d = 64, heads = 4;
  const std::size_t n = batch * seq * d;
  const Tensor q({batch * seq, d}, random_values(n, 1)), k({batch * seq, d}, random_values(n, 2)),
      v({batch * seq, d}, random_values(n, 3));
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v, batch, seq, heads));
}
BENCHMARK(BM_Attention);

struct ToySetup {
  RunConfig cfg;
  DatasetBundle data = build_dataset(cfg);
  GcdModel model = GcdModel(cfg.model, 0);
  ToySetup() { model.set_phase(TrainingPhase::Finetune); }
};

void BM_FeaturesForward(benchmark::State& state) {
  ToySetup s;
  const std::size_t b = 64, per = s.data.dataset.spec.sample_size();
  const std::vector<double> tokens(s.data.dataset.values.begin(),
                                   s.data.dataset.values.begin() + static_cast<long>(b * per));
  for (auto _ : state) {
    ForwardContext ctx;
    benchmark::DoNotOptimize(s.model.features(tokens, b, ctx));
  }
}
BENCHMARK(BM_FeaturesForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ToySetup s;
  SgdMomentum opt(s.model.trainable_parameters(), 0.9, 5e-5);
  std::mt19937_64 rng(1);
  const auto epoch = balanced_epoch(s.data.split, s.cfg.train.batch_size, rng);
  const std::vector<double> pi(s.cfg.model.head.num_classes, 0.01);
  std::size_t i = 0;
  for (auto _ : state) {
    const Batch batch = make_batch(s.data.dataset, epoch[i++ % epoch.size()], s.cfg.train.augment, rng);
    Tape tape;
    Tape::Scope scope(tape);
    ForwardContext ctx{true, &rng, nullptr};
    const LossBreakdown loss = total_loss(s.model, batch, s.cfg.train.weights, pi, LossOptions{}, ctx);
    tape.backward(loss.total);
    opt.step(0.01);
    opt.zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ScoreMatrix s{n, n, random_values(n * n, 4)};
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(s));
}
BENCHMARK(BM_Hungarian)->Arg(10)->Arg(100);

void BM_KMeans(benchmark::State& state) {
  const std::size_t n = 750, d = 64;
  const Tensor x({n, d}, random_values(n * d, 5));
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(x, 10, 0));
}
BENCHMARK(BM_KMeans)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
