// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Subcommand implementations behind the scanstereo executable. Each command
// writes human-readable output to `out`, diagnostics to `err`, and returns a
// process exit code.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scanstereo/config.hpp"

namespace scanstereo::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitIo = 3 };

struct GlobalOptions {
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  std::size_t threads = 0;  // 0: SSA2_THREADS, then hardware concurrency
};

/// Applies --threads, falling back to the SSA2_THREADS environment variable.
void apply_threads(const GlobalOptions& g);

struct SynthOptions {
  std::size_t n = 1;
  std::filesystem::path out;
  std::optional<double> baseline;
  bool underwater = false;
  bool integer_disp = false;
  std::size_t disparity_quantum = 4;
  std::size_t width = 640;
  std::size_t height = 480;
};
int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out, std::ostream& err);

struct InferOptions {
  std::filesystem::path left;
  std::filesystem::path right;
  std::optional<std::filesystem::path> weights;
  std::size_t iters = Defaults::kInferenceIterations;
  std::optional<std::filesystem::path> mono_init;
  std::string mode = "learned";  // learned | oracle
  std::string features = "patch";  // patch | learned
  std::size_t patch_window = Defaults::kPatchWindow;
  bool dump_iters = false;
  std::filesystem::path out;
};
int cmd_infer(const GlobalOptions& g, const InferOptions& o, std::ostream& out, std::ostream& err);

struct EvalOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path gt_dir;
  std::optional<double> focal;
  std::optional<double> baseline;
  std::string format = "table";  // json | table
};
int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out, std::ostream& err);

struct GradcheckOptions {
  /// "LxCxN" triples separated by commas; empty means `configs` random tiny
  /// shapes.
  std::string shapes;
  std::size_t configs = 50;
  double eps = 1e-5;
  double tol = 1e-5;
};
int cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o, std::ostream& out,
                  std::ostream& err);

struct BenchOptions {
  std::vector<std::size_t> lengths;
  std::size_t repeat = 5;
  std::string impl = "seq";  // seq | par | kernel
  std::size_t channels = 1;
  std::size_t state_dim = Defaults::kStateDim;
};

struct BenchPoint {
  std::size_t length = 0;
  double median_seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchPoint> points;
  double slope = 0.0;  // least-squares slope of log time against log L
};

/// Powers of two 2^10 .. 2^20.
std::vector<std::size_t> default_bench_lengths();
BenchReport run_bench_scan(const GlobalOptions& g, const BenchOptions& o);
double loglog_slope(const std::vector<BenchPoint>& points);
int cmd_bench_scan(const GlobalOptions& g, const BenchOptions& o, std::ostream& out,
                   std::ostream& err);

struct SelftestOptions {
  std::filesystem::path golden_dir;
};
/// Golden files are looked up in `golden_dir`, defaulting to the directory
/// baked in at build time.
int cmd_selftest(const GlobalOptions& g, const SelftestOptions& o, std::ostream& out,
                 std::ostream& err);

int cmd_describe_config(std::ostream& out);

/// Parses argv and dispatches. Usage errors return kExitUsage.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scanstereo::cli
