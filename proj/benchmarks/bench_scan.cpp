// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <benchmark/benchmark.h>

#include "scanstereo/random.hpp"
#include "scanstereo/ssm_core.hpp"

namespace {

using namespace scanstereo;

Matrix<double> random_input(std::size_t L, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> x(L, C);
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

void BM_ScanSequential(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = ssm::make_selective_params(1, 4, 1);
  const auto x = random_input(L, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::scan_sequential(x, p));
  state.SetComplexityN(state.range(0));
}

void BM_ScanParallel(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = ssm::make_selective_params(1, 4, 1);
  const auto x = random_input(L, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::scan_parallel(x, p));
  state.SetComplexityN(state.range(0));
}

void BM_ScanKernel(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  auto p = ssm::zero_params(1, 4);
  p.b_delta = {-1.0};
  p.b_bias = {1.0, 0.5, -0.5, 0.25};
  p.c_bias = {1.0, 1.0, 1.0, 1.0};
  const auto x = random_input(L, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::scan_lti_kernel(x, p));
  state.SetComplexityN(state.range(0));
}

void BM_ScanSequentialFloat(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = ssm::make_selective_params(1, 4, 1).cast<float>();
  const auto xd = random_input(L, 1, 2);
  Matrix<float> x(L, 1);
  for (std::size_t i = 0; i < L; ++i) x.data()[i] = static_cast<float>(xd.data()[i]);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::scan_sequential(x, p));
  state.SetComplexityN(state.range(0));
}

BENCHMARK(BM_ScanSequential)->RangeMultiplier(4)->Range(1 << 10, 1 << 20)->Complexity();
BENCHMARK(BM_ScanParallel)->RangeMultiplier(4)->Range(1 << 10, 1 << 20)->Complexity();
BENCHMARK(BM_ScanKernel)->RangeMultiplier(4)->Range(1 << 10, 1 << 20)->Complexity();
BENCHMARK(BM_ScanSequentialFloat)->RangeMultiplier(4)->Range(1 << 10, 1 << 20)->Complexity();

}  // namespace
