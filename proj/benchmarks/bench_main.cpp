#include <benchmark/benchmark.h>

#include <random>

#include "jqas/ops.hpp"
#include "jqas/quantizer.hpp"
#include "jqas/search.hpp"

using namespace jqas;

namespace {

Tensor<float> noise(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = d(gen);
  return t;
}

void BM_Conv2dPointwise(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Var<float> x(noise({32, c, 16, 16}, 1)), w(noise({6 * c, c, 1, 1}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, 1, 0, 1).value().raw());
  state.SetItemsProcessed(state.iterations() * 32 * 16 * 16 * 6 * c * c);
}
BENCHMARK(BM_Conv2dPointwise)->Arg(8)->Arg(16);

void BM_Conv2dDepthwise5x5(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Var<float> x(noise({32, c, 16, 16}, 3)), w(noise({c, 1, 5, 5}, 4));
  for (auto _ : state)
    benchmark::DoNotOptimize(ops::conv2d(x, w, 1, 2, static_cast<int>(c)).value().raw());
  state.SetItemsProcessed(state.iterations() * 32 * 16 * 16 * 25 * c);
}
BENCHMARK(BM_Conv2dDepthwise5x5)->Arg(48)->Arg(96);

void BM_Decompose(benchmark::State& state) {
  const auto t = noise({static_cast<std::size_t>(state.range(0))}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(quant::decompose<float>(t.data()).grid16.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decompose)->Arg(1200)->Arg(24000);

BackboneConfig small_backbone() {
  BackboneConfig bb;
  bb.stem_channels = 4;
  bb.block_channels = {4, 8, 8, 12, 16};
  bb.block_strides = {1, 2, 1, 2, 1};
  bb.input_resolution = 8;
  bb.num_classes = 4;
  return bb;
}

void BM_WeightStep(benchmark::State& state) {
  SearchConfig cfg;
  cfg.max_epochs = 1;
  cfg.warmup_epochs = 0;
  auto s = initialize(cfg, RewardConfig{}, small_backbone());
  Batch b{noise({64, 3, 8, 8}, 6), std::vector<int>(64)};
  for (std::size_t i = 0; i < 64; ++i) b.labels[i] = static_cast<int>(i % 4);
  for (auto _ : state) benchmark::DoNotOptimize(weight_step(s, b));
}
BENCHMARK(BM_WeightStep)->Unit(benchmark::kMillisecond);

void BM_HardForward(benchmark::State& state) {
  Rng rng(7);
  const auto net = SuperNet::build(small_backbone(), rng);
  const auto spec = net.determinize();
  const auto x = noise({64, 3, 8, 8}, 8);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_spec(x, spec).value().raw());
}
BENCHMARK(BM_HardForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
