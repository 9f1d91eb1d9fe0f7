// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <benchmark/benchmark.h>

#include "scanstereo/cost_volume.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/scan2d.hpp"

namespace {

using namespace scanstereo;

FeatureMap2D random_map(std::size_t H, std::size_t W, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap2D f(H, W, C);
  for (auto& v : f.data()) v = rng.uniform(-1.0, 1.0);
  return f;
}

// Quarter resolution of a 640 x 480 pair with 5 x 5 patch features.
void BM_CorrelationPyramid(benchmark::State& state) {
  const FeatureMap2D l = random_map(120, 160, 25, 1), r = random_map(120, 160, 25, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cost::build_pyramid(cost::build_correlation(l, r)));
  }
}

void BM_Lookup(benchmark::State& state) {
  const auto pyr = cost::build_pyramid(
      cost::build_correlation(random_map(120, 160, 25, 1), random_map(120, 160, 25, 2)));
  cost::DisparityMap d(120, 160, 7.25);
  for (auto _ : state) benchmark::DoNotOptimize(cost::lookup(pyr, d, 4));
}

void BM_ConvSS2D(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const FeatureMap2D f = random_map(side, side, 32, 3);
  const auto w = scan2d::make_convss2d_weights(32, 4, 4);
  for (auto _ : state) benchmark::DoNotOptimize(scan2d::convss2d_forward(f, w));
  state.SetComplexityN(static_cast<std::int64_t>(side * side));
}

BENCHMARK(BM_CorrelationPyramid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lookup)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvSS2D)->RangeMultiplier(2)->Range(16, 128)->Unit(benchmark::kMillisecond)->Complexity();

}  // namespace
