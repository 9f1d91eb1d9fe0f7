// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo_cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "scanstereo/cost_volume.hpp"
#include "scanstereo/errors.hpp"
#include "scanstereo/features.hpp"
#include "scanstereo/metrics.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/refine.hpp"
#include "scanstereo/scan2d.hpp"
#include "scanstereo/ssm_core.hpp"
#include "scanstereo/synth_scenes.hpp"
#include "scanstereo/tensor_io.hpp"

#ifndef SCANSTEREO_GOLDEN_DIR
#define SCANSTEREO_GOLDEN_DIR "tests/data"
#endif

namespace scanstereo::cli {
namespace {

// Maps library exceptions onto exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const IoError& e) {
    err << "io error: " << e.what() << " (" << e.path() << ")\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ArchiveError& e) {
    err << "archive error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const metrics::EmptyReportError& e) {
    err << "empty report: " << e.what() << "\n";
    return kExitFailure;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << " at index " << e.index() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

Matrix<std::uint8_t> occlusion_to_valid(const Matrix<double>& occ) {
  Matrix<std::uint8_t> valid(occ.rows(), occ.cols(), 0);
  for (std::size_t k = 0; k < occ.size(); ++k) valid.data()[k] = occ.data()[k] == 0.0;
  return valid;
}

std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> parse_shapes(const std::string& s) {
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> shapes;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t l = 0, c = 0, n = 0;
    char x1 = 0, x2 = 0;
    std::stringstream is(item);
    if (!(is >> l >> x1 >> c >> x2 >> n) || x1 != 'x' || x2 != 'x' || l == 0 || c == 0 ||
        n == 0) {
      throw ConfigError("--shapes entries must look like LxCxN with positive sizes, got '" +
                        item + "'");
    }
    shapes.emplace_back(l, c, n);
  }
  if (shapes.empty()) throw ConfigError("--shapes is empty");
  return shapes;
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

template <typename Fn>
double median_seconds(std::size_t repeat, Fn&& fn) {
  std::vector<double> times;
  for (std::size_t r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size() / 2;
  return times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
}

}  // namespace

void apply_threads(const GlobalOptions& g) {
  std::size_t n = g.threads;
  if (n == 0) {
    if (const char* env = std::getenv("SSA2_THREADS")) {
      char* end = nullptr;
      const unsigned long v = std::strtoul(env, &end, 10);
      if (end != env && *end == '\0') n = static_cast<std::size_t>(v);
    }
  }
  set_num_threads(n);
}

int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    if (o.n == 0) throw ConfigError("--n must be at least 1");
    if (o.out.empty()) throw ConfigError("--out is required");
    if (o.baseline && !(*o.baseline > 0.0)) throw ConfigError("--baseline must be positive");
    synth::DatasetOptions opts;
    opts.seed = g.seed;
    opts.sampler.baseline_m = o.baseline;
    opts.sampler.width = o.width;
    opts.sampler.height = o.height;
    opts.render.integer_disparity = o.integer_disp;
    opts.render.disparity_quantum = o.disparity_quantum;
    opts.random_underwater = o.underwater;
    synth::dataset_emit(o.n, o.out, opts);
    out << "wrote " << o.n << " scene(s) to " << o.out.string() << "\n";
    return kExitOk;
  });
}

int cmd_infer(const GlobalOptions& g, const InferOptions& o, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    if (o.mode != "learned" && o.mode != "oracle") {
      throw ConfigError("--mode must be learned or oracle");
    }
    if (o.features != "patch" && o.features != "learned") {
      throw ConfigError("--features must be patch or learned");
    }
    if (o.out.empty()) throw ConfigError("--out is required");
    const Image left = ppm_read(o.left);
    const Image right = ppm_read(o.right);

    refine::RefineConfig cfg;
    cfg.iterations = o.iters;
    cfg.mode = o.mode == "oracle" ? refine::UpdateMode::kOracle : refine::UpdateMode::kLearned;
    cfg.precision = g.precision;
    cfg.keep_snapshots = o.dump_iters;
    cfg.extractor.seed = g.seed;
    cfg.extractor.patch_window = o.patch_window;
    cfg.extractor.mode =
        o.features == "learned" ? features::Mode::kLearned : features::Mode::kPatch;

    std::optional<TensorArchive> archive;
    if (o.weights) archive = TensorArchive::load(*o.weights);
    std::optional<features::LearnedWeights> feat_w;
    if (archive && archive->contains("feat.conv1")) {
      feat_w = features::load_learned_weights(*archive);
      cfg.extractor.channels = feat_w->channels;
    }
    std::optional<refine::UpdateWeights> update_w;
    if (cfg.mode == refine::UpdateMode::kLearned) {
      if (archive) {
        update_w = refine::load_update_weights(*archive);
      } else {
        refine::UpdateDims dims;
        dims.feature_channels = cfg.extractor.output_channels();
        update_w = refine::make_update_weights(dims, g.seed);
      }
      cfg.radius = update_w->dims.radius;
    }
    std::optional<Matrix<double>> mono;
    if (o.mono_init) mono = pfm_read_double(*o.mono_init);

    const refine::RefineResult result =
        refine::run_refinement(left, right, update_w ? &*update_w : nullptr, cfg,
                               mono ? &*mono : nullptr, feat_w ? &*feat_w : nullptr);
    if (o.out.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(o.out.parent_path(), ec);
      if (ec) throw IoError("cannot create output directory: " + ec.message(), o.out.string());
    }
    pfm_write_narrowed(o.out, result.disparity);
    if (o.dump_iters) {
      const std::filesystem::path dir = o.out.parent_path() / "iters";
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      if (ec) throw IoError("cannot create snapshot directory: " + ec.message(), dir.string());
      for (std::size_t t = 0; t < result.snapshots.size(); ++t) {
        pfm_write_narrowed(dir / (std::to_string(t) + ".pfm"), result.snapshots[t]);
      }
    }
    out << "wrote " << result.disparity.cols() << "x" << result.disparity.rows()
        << " disparity to " << o.out.string() << "\n";
    return kExitOk;
  });
}

int cmd_eval(const GlobalOptions&, const EvalOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (o.format != "json" && o.format != "table") {
      throw ConfigError("--format must be json or table");
    }
    if (!std::filesystem::is_directory(o.gt_dir)) {
      throw IoError("ground-truth directory not found", o.gt_dir.string());
    }
    if (!std::filesystem::is_directory(o.pred_dir)) {
      throw IoError("prediction directory not found", o.pred_dir.string());
    }
    std::map<std::string, CameraRig> manifest_rigs;
    const std::filesystem::path manifest = o.gt_dir / "manifest.json";
    if (std::filesystem::exists(manifest)) {
      const auto bytes = read_file_bytes(manifest);
      const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (j.is_discarded()) throw IoError("manifest is not valid JSON", manifest.string());
      for (const auto& s : j.value("scenes", nlohmann::json::array())) {
        manifest_rigs[s.at("id").get<std::string>()] =
            CameraRig{s.at("rig").at("focal_px").get<double>(),
                      s.at("rig").at("baseline_m").get<double>()};
      }
    }

    std::vector<std::string> stems;
    for (const auto& entry : std::filesystem::directory_iterator(o.gt_dir)) {
      const std::string name = entry.path().filename().string();
      const std::string suffix = "_disp.pfm";
      if (name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        stems.push_back(name.substr(0, name.size() - suffix.size()));
      }
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw IoError("no *_disp.pfm files in ground-truth directory",
                                     o.gt_dir.string());

    std::vector<metrics::NamedReport> rows;
    std::vector<metrics::MetricReport> reports;
    for (const std::string& stem : stems) {
      CameraRig rig;
      if (o.focal && o.baseline) {
        rig = CameraRig{*o.focal, *o.baseline};
      } else if (auto it = manifest_rigs.find(stem); it != manifest_rigs.end()) {
        rig = it->second;
        if (o.focal) rig.focal_px = *o.focal;
        if (o.baseline) rig.baseline_m = *o.baseline;
      } else {
        throw ConfigError("no --focal/--baseline given and no manifest entry for " + stem);
      }
      const Matrix<double> gt = pfm_read_double(o.gt_dir / (stem + "_disp.pfm"));
      std::filesystem::path pred_path = o.pred_dir / (stem + "_disp.pfm");
      if (!std::filesystem::exists(pred_path)) pred_path = o.pred_dir / (stem + ".pfm");
      if (!std::filesystem::exists(pred_path)) {
        throw IoError("missing prediction for " + stem, (o.pred_dir / (stem + "_disp.pfm")).string());
      }
      const Matrix<double> pred = pfm_read_double(pred_path);
      if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw ShapeError("prediction " + pred_path.string() + " does not match ground truth size");
      }
      Matrix<std::uint8_t> mask(gt.rows(), gt.cols(), 1);
      const std::filesystem::path occ_path = o.gt_dir / (stem + "_occ.pfm");
      if (std::filesystem::exists(occ_path)) mask = occlusion_to_valid(pfm_read_double(occ_path));
      const metrics::DepthMap zg = metrics::disparity_to_depth(gt, rig);
      const metrics::DepthMap zp = metrics::disparity_to_depth(pred, rig);
      for (std::size_t k = 0; k < mask.size(); ++k) {
        mask.data()[k] = mask.data()[k] && zg.valid.data()[k] && zp.valid.data()[k];
      }
      const metrics::MetricReport r = metrics::compute_metrics(zp.z, zg.z, mask);
      rows.push_back({stem, r});
      reports.push_back(r);
    }
    const metrics::MetricReport total = metrics::aggregate(reports);
    if (o.format == "json") {
      out << metrics::to_json(rows, total) << "\n";
    } else {
      out << metrics::format_table(rows, total);
    }
    return kExitOk;
  });
}

int cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o, std::ostream& out,
                  std::ostream& err) {
  return guarded(err, [&] {
    // The adjoint is only defined in double; --precision does not apply here.
    if (!(o.eps > 0.0) || !(o.tol >= 0.0)) throw ConfigError("--eps must be > 0 and --tol >= 0");
    Rng rng(g.seed);
    std::vector<oracle::ScanConfig> configs;
    if (o.shapes.empty()) {
      if (o.configs == 0) throw ConfigError("--configs must be positive");
      for (std::size_t k = 0; k < o.configs; ++k) {
        configs.push_back(oracle::random_scan_config(rng, 6, 3, 3, true));
      }
    } else {
      for (const auto& [l, c, n] : parse_shapes(o.shapes)) {
        oracle::ScanConfig cfg;
        do {
          cfg = oracle::random_scan_config(rng, l, c, n, true);
        } while (cfg.length != l || cfg.channels != c || cfg.state_dim != n);
        configs.push_back(std::move(cfg));
      }
    }
    double worst = 0.0;
    std::size_t failures = 0;
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const oracle::ScanConfig& cfg = configs[k];
      Matrix<double> gy(cfg.length, cfg.channels);
      for (auto& v : gy.data()) v = rng.uniform(-1.0, 1.0);
      const oracle::GradCheckResult r = oracle::gradient_check(cfg, gy, o.eps);
      const bool ok = r.max_rel_error <= o.tol;
      failures += !ok;
      worst = std::max(worst, r.max_rel_error);
      out << "config " << k << " L=" << cfg.length << " C=" << cfg.channels
          << " N=" << cfg.state_dim << " max_rel_error=" << std::scientific
          << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " ("
          << r.worst_parameter << ") " << (ok ? "ok" : "FAIL") << "\n";
    }
    out << "gradcheck: " << configs.size() - failures << "/" << configs.size()
        << " within tol " << o.tol << ", worst " << std::scientific << worst
        << std::defaultfloat << "\n";
    return failures == 0 ? kExitOk : kExitFailure;
  });
}

std::vector<std::size_t> default_bench_lengths() {
  std::vector<std::size_t> v;
  for (std::size_t p = 10; p <= 20; ++p) v.push_back(std::size_t{1} << p);
  return v;
}

double loglog_slope(const std::vector<BenchPoint>& points) {
  if (points.size() < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(points.size());
  for (const BenchPoint& p : points) {
    const double x = std::log(static_cast<double>(p.length));
    const double y = std::log(std::max(p.median_seconds, 1e-12));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

template <typename T>
BenchReport bench_impl(const GlobalOptions& g, const BenchOptions& o) {
  Rng rng(g.seed);
  ssm::SelectiveParams<double> p = ssm::make_selective_params(o.channels, o.state_dim, g.seed);
  if (o.impl == "kernel") {
    std::fill(p.w_delta.data().begin(), p.w_delta.data().end(), 0.0);
    std::fill(p.w_b.data().begin(), p.w_b.data().end(), 0.0);
    std::fill(p.w_c.data().begin(), p.w_c.data().end(), 0.0);
  }
  const ssm::SelectiveParams<T> pt = p.template cast<T>();
  BenchReport report;
  for (std::size_t L : o.lengths) {
    Matrix<T> x(L, o.channels);
    for (auto& v : x.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    double sink = 0.0;
    const double t = median_seconds(o.repeat, [&] {
      if (o.impl == "seq") {
        sink += static_cast<double>(ssm::scan_sequential(x, pt).y(L - 1, 0));
      } else if (o.impl == "par") {
        sink += static_cast<double>(ssm::scan_parallel(x, pt).y(L - 1, 0));
      } else {
        sink += static_cast<double>(ssm::scan_lti_kernel(x, pt)(L - 1, 0));
      }
    });
    if (!std::isfinite(sink)) throw NumericError("bench-scan: non-finite output", L);
    report.points.push_back({L, t});
  }
  report.slope = loglog_slope(report.points);
  return report;
}

}  // namespace

BenchReport run_bench_scan(const GlobalOptions& g, const BenchOptions& o) {
  if (o.impl != "seq" && o.impl != "par" && o.impl != "kernel") {
    throw ConfigError("--impl must be seq, par or kernel");
  }
  if (o.repeat == 0 || o.channels == 0 || o.state_dim == 0) {
    throw ConfigError("--repeat, channels and state size must be positive");
  }
  BenchOptions opts = o;
  if (opts.lengths.empty()) opts.lengths = default_bench_lengths();
  for (std::size_t L : opts.lengths) {
    if (L == 0) throw ConfigError("--lengths entries must be positive");
  }
  return g.precision == Precision::kFloat32 ? bench_impl<float>(g, opts)
                                            : bench_impl<double>(g, opts);
}

int cmd_bench_scan(const GlobalOptions& g, const BenchOptions& o, std::ostream& out,
                   std::ostream& err) {
  return guarded(err, [&] {
    const BenchReport r = run_bench_scan(g, o);
    out << "impl=" << o.impl << " threads=" << num_threads() << "\n";
    out << std::setw(10) << "L" << std::setw(16) << "median_ms" << std::setw(14) << "ns/elem"
        << "\n";
    for (const BenchPoint& p : r.points) {
      out << std::setw(10) << p.length << std::setw(16) << std::fixed << std::setprecision(4)
          << p.median_seconds * 1e3 << std::setw(14) << std::setprecision(2)
          << p.median_seconds * 1e9 / static_cast<double>(p.length) << std::defaultfloat << "\n";
    }
    out << "loglog_slope=" << std::setprecision(4) << r.slope << "\n";
    return kExitOk;
  });
}

namespace {

struct CheckOutcome {
  bool pass = false;
  std::string detail;
};

using Check = std::pair<std::string, std::function<CheckOutcome()>>;

std::vector<Check> selftest_checks(const GlobalOptions& g, const std::filesystem::path& golden) {
  std::vector<Check> checks;
  checks.emplace_back("scan_parallel_vs_sequential", [g] {
    Rng rng(g.seed);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto cfg = oracle::random_scan_config(rng, 512, 4, 4, k % 2 == 0);
      const auto a = ssm::scan_sequential(cfg.x, cfg.params, cfg.h_init).y;
      const auto b = ssm::scan_parallel(cfg.x, cfg.params, cfg.h_init).y;
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
      }
    }
    return CheckOutcome{worst <= 1e-12, "max |dev| = " + sci(worst)};
  });
  checks.emplace_back("scan_sequential_vs_naive_oracle", [g] {
    Rng rng(g.seed + 1);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const auto cfg = oracle::random_scan_config(rng, 256, 4, 4, false);
      const auto a = ssm::scan_sequential(cfg.x, cfg.params).y;
      const auto b = oracle::naive_scan(cfg.x, cfg.params);
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
      }
    }
    return CheckOutcome{worst <= 1e-10, "max |dev| = " + sci(worst)};
  });
  checks.emplace_back("lti_kernel_equivalence", [g] {
    Rng rng(g.seed + 2);
    double worst = 0.0;
    for (int k = 0; k < 40; ++k) {
      const auto cfg = oracle::random_lti_config(rng, 512, 4, 4);
      const auto a = ssm::scan_sequential(cfg.x, cfg.params).y;
      const auto b = ssm::scan_lti_kernel(cfg.x, cfg.params);
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
      }
    }
    return CheckOutcome{worst <= 1e-12, "max |dev| = " + sci(worst)};
  });
  checks.emplace_back("zoh_closed_form", [] {
    const auto d = ssm::discretize(std::log(2.0), -1.0, 1.0);
    const double e = std::max(std::fabs(d.a_bar - 0.5), std::fabs(d.b_bar - 0.5));
    return CheckOutcome{e <= 1e-15, "error = " + sci(e)};
  });
  checks.emplace_back("gradient_check", [g] {
    Rng rng(g.seed + 3);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      const auto cfg = oracle::random_scan_config(rng, 6, 3, 3, true);
      Matrix<double> gy(cfg.length, cfg.channels);
      for (auto& v : gy.data()) v = rng.uniform(-1.0, 1.0);
      worst = std::max(worst, oracle::gradient_check(cfg, gy, 1e-5).max_rel_error);
    }
    return CheckOutcome{worst <= 1e-5, "max rel error = " + sci(worst)};
  });
  checks.emplace_back("correlation_oracle", [g] {
    Rng rng(g.seed + 4);
    for (int k = 0; k < 20; ++k) {
      FeatureMap2D l(3, 7, 5), r(3, 7, 5);
      for (auto& v : l.data()) v = rng.uniform(-1.0, 1.0);
      for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);
      if (cost::build_correlation(l, r).c != oracle::triple_loop_correlation(l, r)) {
        return CheckOutcome{false, "mismatch on case " + std::to_string(k)};
      }
    }
    return CheckOutcome{true, "20 cases exact"};
  });
  checks.emplace_back("cross_scan_bijection", [] {
    for (std::size_t h = 1; h <= 6; ++h) {
      for (std::size_t w = 1; w <= 6; ++w) {
        for (std::size_t d = 0; d < scan2d::kNumDirections; ++d) {
          const auto order = scan2d::scan_order(scan2d::kAllDirections[d], h, w);
          std::vector<int> seen(h * w, 0);
          for (std::size_t t = 0; t < order.size(); ++t) {
            if (order[t] != oracle::direction_pixel(static_cast<int>(d), t, h, w)) {
              return CheckOutcome{false, "order mismatch"};
            }
            ++seen[order[t]];
          }
          if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) {
            return CheckOutcome{false, "not a bijection"};
          }
        }
      }
    }
    return CheckOutcome{true, "H, W <= 6"};
  });
  checks.emplace_back("archive_round_trip", [g] {
    Rng rng(g.seed + 5);
    TensorArchive a;
    for (int k = 0; k < 10; ++k) {
      const auto r = static_cast<std::uint32_t>(rng.uniform_int(1, 5));
      const auto c = static_cast<std::uint32_t>(rng.uniform_int(1, 5));
      std::vector<float> data(r * c);
      for (auto& v : data) v = static_cast<float>(rng.normal());
      a.add("t" + std::to_string(k), {r, c}, data);
    }
    const auto bytes = a.serialize();
    const bool ok = TensorArchive::deserialize(bytes).serialize() == bytes;
    return CheckOutcome{ok, std::to_string(bytes.size()) + " bytes"};
  });
  checks.emplace_back("golden_pfm", [golden] {
    const std::filesystem::path path = golden / "golden_1x1.pfm";
    const std::vector<std::uint8_t> expected = {'P', 'f', '\n', '1', ' ', '1', '\n', '-', '1',
                                                '.', '0', '\n', 0x00, 0x00, 0x20, 0x40};
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file_bytes(path);
    } catch (const IoError&) {
      return CheckOutcome{false, "cannot read " + path.string()};
    }
    if (bytes != expected) return CheckOutcome{false, path.string() + " differs from encoding"};
    try {
      const Matrix<float> m = pfm_decode(bytes);
      if (m.rows() != 1 || m.cols() != 1 || m(0, 0) != 2.5f) {
        return CheckOutcome{false, "decoded value is not 2.5"};
      }
    } catch (const std::exception& e) {
      return CheckOutcome{false, e.what()};
    }
    Matrix<float> m(1, 1, 2.5f);
    return CheckOutcome{pfm_encode(m) == expected, path.string()};
  });
  checks.emplace_back("golden_archive", [golden] {
    const std::filesystem::path path = golden / "golden_1x1.ssa";
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file_bytes(path);
    } catch (const IoError&) {
      return CheckOutcome{false, "cannot read " + path.string()};
    }
    TensorArchive a;
    const float one = 1.0f;
    a.add("w", {1, 1}, std::span<const float>(&one, 1));
    return CheckOutcome{a.serialize() == bytes, path.string()};
  });
  checks.emplace_back("metrics_closed_form", [] {
    Matrix<double> gt(4, 4, 2.0), pred(4, 4, 2.6);
    Matrix<std::uint8_t> mask(4, 4, 1);
    const auto r = metrics::compute_metrics(pred, gt, mask);
    const bool ok = std::fabs(r.absrel - 0.3) < 1e-6 && std::fabs(r.rmse - 0.6) < 1e-6 &&
                    std::fabs(r.sqrel - 0.18) < 1e-6 &&
                    std::fabs(r.logrmse - std::log(1.3)) < 1e-6 && r.delta1 == 0.0 &&
                    r.delta2 == 1.0 && r.delta3 == 1.0;
    return CheckOutcome{ok, "pred = 1.3 gt"};
  });
  checks.emplace_back("defaults", [] {
    const auto j = nlohmann::json::parse(describe_defaults_json());
    const bool ok = j["d_state"] == 4 && j["ssm_ratio"] == 1.0 &&
                    j["inference_iterations"] == 32 && j["scan_directions"] == 4;
    return CheckOutcome{ok, "d_state 4, ssm_ratio 1.0, iters 32, directions 4"};
  });
  return checks;
}

}  // namespace

int cmd_selftest(const GlobalOptions& g, const SelftestOptions& o, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const std::filesystem::path golden =
        o.golden_dir.empty() ? std::filesystem::path(SCANSTEREO_GOLDEN_DIR) : o.golden_dir;
    std::size_t failed = 0;
    for (const auto& [name, fn] : selftest_checks(g, golden)) {
      CheckOutcome r;
      try {
        r = fn();
      } catch (const std::exception& e) {
        r = {false, std::string("exception: ") + e.what()};
      }
      failed += !r.pass;
      out << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(34) << name << std::right
          << r.detail << "\n";
    }
    out << (failed == 0 ? "selftest passed" : "selftest FAILED: " + std::to_string(failed) +
                                                   " check(s)")
        << "\n";
    return failed == 0 ? kExitOk : kExitFailure;
  });
}

int cmd_describe_config(std::ostream& out) {
  out << describe_defaults_json() << "\n";
  return kExitOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Selective state-space stereo toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::string precision = "f32";
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--precision", precision, "Storage precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = SSA2_THREADS or auto)")
      ->capture_default_str();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Render a synthetic stereo dataset");
  synth->add_option("--n", so.n, "Number of scenes")->capture_default_str();
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--baseline", so.baseline, "Fixed baseline in metres");
  synth->add_flag("--underwater", so.underwater, "Apply seeded underwater degradation");
  synth->add_flag("--integer-disp", so.integer_disp, "Snap disparities to integers");
  synth->add_option("--disp-quantum", so.disparity_quantum,
                    "Integer mode disparity step in pixels")
      ->capture_default_str();
  synth->add_option("--width", so.width)->capture_default_str();
  synth->add_option("--height", so.height)->capture_default_str();

  InferOptions io;
  auto* infer = app.add_subcommand("infer", "Estimate disparity for a rectified pair");
  infer->add_option("--left", io.left, "Left PPM")->required();
  infer->add_option("--right", io.right, "Right PPM")->required();
  infer->add_option("--weights", io.weights, "Tensor archive with refine.* (and feat.*)");
  infer->add_option("--iters", io.iters, "Refinement iterations")->capture_default_str();
  infer->add_option("--mono-init", io.mono_init, "Full-resolution initial disparity PFM");
  infer->add_option("--mode", io.mode, "learned | oracle")
      ->check(CLI::IsMember({"learned", "oracle"}))
      ->capture_default_str();
  infer->add_option("--features", io.features, "patch | learned")
      ->check(CLI::IsMember({"patch", "learned"}))
      ->capture_default_str();
  infer->add_option("--patch-window", io.patch_window, "Odd patch size for patch features")
      ->capture_default_str();
  infer->add_flag("--dump-iters", io.dump_iters, "Write iters/{t}.pfm next to --out");
  infer->add_option("--out", io.out, "Output disparity PFM")->required();

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Depth metrics of predictions against ground truth");
  eval->add_option("--pred-dir", eo.pred_dir)->required();
  eval->add_option("--gt-dir", eo.gt_dir)->required();
  eval->add_option("--focal", eo.focal, "Focal length in pixels");
  eval->add_option("--baseline", eo.baseline, "Baseline in metres");
  eval->add_option("--format", eo.format, "json | table")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();

  GradcheckOptions go;
  auto* grad = app.add_subcommand("gradcheck", "Check scan gradients against finite differences");
  grad->add_option("--shapes", go.shapes, "Comma-separated LxCxN list");
  grad->add_option("--configs", go.configs, "Random configs when --shapes is absent")
      ->capture_default_str();
  grad->add_option("--eps", go.eps)->capture_default_str();
  grad->add_option("--tol", go.tol)->capture_default_str();

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench-scan", "Time scan implementations against length");
  bench->add_option("--lengths", bo.lengths, "Sequence lengths (default 2^10..2^20)")
      ->delimiter(',');
  bench->add_option("--repeat", bo.repeat)->capture_default_str();
  bench->add_option("--impl", bo.impl, "seq | par | kernel")
      ->check(CLI::IsMember({"seq", "par", "kernel"}))
      ->capture_default_str();
  bench->add_option("--channels", bo.channels)->capture_default_str();
  bench->add_option("--state-dim", bo.state_dim)->capture_default_str();

  SelftestOptions sto;
  auto* self = app.add_subcommand("selftest", "Run the built-in invariant suite");
  self->add_option("--golden-dir", sto.golden_dir, "Directory holding the golden files");

  auto* describe = app.add_subcommand("describe-config", "Print default configuration as JSON");

  for (CLI::App* sub : {synth, infer, eval, grad, bench, self, describe}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  g.precision = precision == "f32" ? Precision::kFloat32 : Precision::kFloat64;
  apply_threads(g);

  if (*synth) return cmd_synth(g, so, out, err);
  if (*infer) return cmd_infer(g, io, out, err);
  if (*eval) return cmd_eval(g, eo, out, err);
  if (*grad) return cmd_gradcheck(g, go, out, err);
  if (*bench) return cmd_bench_scan(g, bo, out, err);
  if (*self) return cmd_selftest(g, sto, out, err);
  return cmd_describe_config(out);
}

}  // namespace scanstereo::cli
