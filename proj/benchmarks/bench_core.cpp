#include <benchmark/benchmark.h>

#include "grn/hbq.hpp"
#include "grn/predictor.hpp"
#include "grn/refine.hpp"
#include "grn/sampler.hpp"
#include "grn/trainer.hpp"

using namespace grn;

namespace {

TensorD features(std::size_t n) {
  Rng rng(1);
  TensorD f({1, 1, n, 1});
  for (double& v : f.values()) v = 1.98 * rng.uniform() - 0.99;
  return f;
}

PredictorConfig model(int depth, int hidden) {
  PredictorConfig c;
  c.depth = depth;
  c.hidden = hidden;
  c.ffn_hidden = 2 * hidden;
  return c;
}

void BM_Quantize(benchmark::State& state) {
  const auto f = features(65536);
  const int m = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(hbq::quantize(f, m));
  state.SetItemsProcessed(state.iterations() * 65536);
}
BENCHMARK(BM_Quantize)->Arg(2)->Arg(8)->Arg(16);

void BM_PackIndices(benchmark::State& state) {
  const auto planes = hbq::quantize(features(65536), 8);
  for (auto _ : state) benchmark::DoNotOptimize(hbq::pack_indices(planes));
  state.SetItemsProcessed(state.iterations() * 65536);
}
BENCHMARK(BM_PackIndices);

void BM_Serialize(benchmark::State& state) {
  const auto planes = hbq::quantize(features(65536), 8);
  for (auto _ : state) benchmark::DoNotOptimize(hbq::serialize(planes));
  state.SetBytesProcessed(state.iterations() * 65536);
}
BENCHMARK(BM_Serialize);

void BM_Forward(benchmark::State& state) {
  const auto cfg = model(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  Rng rng(2);
  auto params = init_params(cfg, rng);
  const auto x = random_token_map(Layout::index, 4, 64, 4, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, x, 1u));
}
BENCHMARK(BM_Forward)->Args({1, 32})->Args({2, 64});

void BM_TrainStep(benchmark::State& state) {
  const auto cfg = model(2, 64);
  Rng rng(3);
  TrainConfig tc;
  tc.batch_size = 16;
  Trainer tr(init_params(cfg, rng), tc);
  std::vector<LabeledMap> batch;
  for (std::uint32_t i = 0; i < 16; ++i) {
    batch.push_back({random_token_map(Layout::index, 4, 64, 4, rng), i % 10});
  }
  for (auto _ : state) benchmark::DoNotOptimize(tr.step(batch, rng));
  state.SetItemsProcessed(state.iterations() * 16 * 256);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Sample50(benchmark::State& state) {
  const auto cfg = model(2, 64);
  Rng rng(4);
  auto params = init_params(cfg, rng);
  SampleConfig sc;
  for (auto _ : state) benchmark::DoNotOptimize(sample(params, 1u, sc, rng));
}
BENCHMARK(BM_Sample50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
