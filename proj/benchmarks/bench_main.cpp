// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <benchmark/benchmark.h>

BENCHMARK_MAIN();
