// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "scanstereo/metrics.hpp"
#include "scanstereo/synth_scenes.hpp"
#include "scanstereo/tensor_io.hpp"
#include "scanstereo_cli/commands.hpp"
#include "test_util.hpp"

using namespace scanstereo;
namespace fs = std::filesystem;

namespace {

const fs::path kData = SCANSTEREO_TEST_DATA;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "scanstereo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

/// One small integer-disparity scene in `dir`.
void small_dataset(const fs::path& dir, std::size_t n = 1, const std::string& seed = "3") {
  const Outcome o = run({"--seed", seed, "synth", "--n", std::to_string(n), "--out", p(dir),
                         "--integer-disp", "--width", "160", "--height", "96"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"infer", "--left", "a.ppm"}).code == 2);
  CHECK(run({"--precision", "f16", "describe-config"}).code == 2);
  CHECK(run({"bench-scan", "--impl", "fast"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("describe-config prints the defaults") {
  const Outcome o = run({"describe-config"});
  REQUIRE(o.code == 0);
  const auto j = nlohmann::json::parse(o.out);
  CHECK(j["d_state"] == 4);
  CHECK(j["inference_iterations"] == 32);
}

TEST_CASE("synth writes four files per scene plus a manifest") {
  testing::TempDir dir("cli_synth");
  small_dataset(dir.path());
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++files;
  CHECK(files == 5);
  CHECK(fs::exists(dir.path() / "manifest.json"));
}

TEST_CASE("synth is deterministic under a fixed seed and honours the baseline") {
  testing::TempDir a("cli_det_a"), b("cli_det_b");
  small_dataset(a.path(), 3, "11");
  small_dataset(b.path(), 3, "11");
  for (const auto& e : fs::directory_iterator(a.path())) {
    CHECK(read_file_bytes(e.path()) == read_file_bytes(b.path() / e.path().filename()));
  }
  testing::TempDir c("cli_base");
  REQUIRE(run({"synth", "--n", "2", "--out", p(c.path()), "--baseline", "0.4", "--width", "160",
               "--height", "96"})
              .code == 0);
  const auto bytes = read_file_bytes(c.path() / "manifest.json");
  const auto m = nlohmann::json::parse(bytes.begin(), bytes.end());
  for (const auto& s : m["scenes"]) CHECK(s["rig"]["baseline_m"].get<double>() == 0.4);
}

TEST_CASE("synth config and io failures") {
  testing::TempDir dir("cli_synth_err");
  CHECK(run({"synth", "--out", p(dir.path()), "--baseline", "-1"}).code == 2);
  CHECK(run({"synth", "--out", p(dir.path()), "--width", "100"}).code == 2);
  write_file_bytes(dir.path() / "blocker", std::vector<std::uint8_t>{0});
  const Outcome o = run({"synth", "--out", p(dir.path() / "blocker" / "x"), "--width", "160",
                         "--height", "96"});
  CHECK(o.code == 3);
  CHECK(o.err.find("blocker") != std::string::npos);
}

TEST_CASE("infer with zero iterations emits the initialization at input size") {
  testing::TempDir dir("cli_infer0");
  small_dataset(dir.path());
  const fs::path out = dir.path() / "pred" / "scene_0000_disp.pfm";
  const Outcome o = run({"infer", "--left", p(dir.path() / "scene_0000_left.ppm"), "--right",
                         p(dir.path() / "scene_0000_right.ppm"), "--iters", "0", "--out", p(out)});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const Matrix<float> d = pfm_read(out);
  CHECK(d.rows() == 96);
  CHECK(d.cols() == 160);
  for (float v : d.data()) CHECK(v == 0.0f);

  Matrix<float> mono(96, 160, 20.0f);
  pfm_write(dir.path() / "mono.pfm", mono);
  REQUIRE(run({"infer", "--left", p(dir.path() / "scene_0000_left.ppm"), "--right",
               p(dir.path() / "scene_0000_right.ppm"), "--iters", "0", "--mono-init",
               p(dir.path() / "mono.pfm"), "--out", p(out)})
              .code == 0);
  for (float v : pfm_read(out).data()) CHECK(v == doctest::Approx(20.0f));
}

TEST_CASE("infer in oracle mode recovers a synthetic plane and dumps iterates") {
  testing::TempDir dir("cli_oracle");
  synth::SceneSpec spec;
  spec.width = 320;
  spec.height = 96;
  const CameraRig rig{400.0, 0.3};
  spec.background_depth_m = rig.depth(24.0);
  const synth::StereoPair pair = synth::render_stereo(spec, rig, 8, {true, 4});
  ppm_write(dir.path() / "left.ppm", pair.left);
  ppm_write(dir.path() / "right.ppm", pair.right);

  const fs::path out = dir.path() / "pred" / "disp.pfm";
  const Outcome o = run({"infer", "--left", p(dir.path() / "left.ppm"), "--right",
                         p(dir.path() / "right.ppm"), "--mode", "oracle", "--iters", "3",
                         "--dump-iters", "--out", p(out)});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  for (int t = 0; t <= 3; ++t) {
    CHECK(fs::exists(dir.path() / "pred" / "iters" / (std::to_string(t) + ".pfm")));
  }
  Matrix<std::uint8_t> mask(pair.gt_disp.rows(), pair.gt_disp.cols());
  for (std::size_t k = 0; k < mask.size(); ++k) mask.data()[k] = pair.occluded.data()[k] == 0;
  const double within = metrics::fraction_within(pfm_read_double(out), pair.gt_disp, mask, 0.5);
  INFO("fraction within 0.5 px: " << within);
  CHECK(within >= 0.99);
}

TEST_CASE("infer io and config failures") {
  testing::TempDir dir("cli_infer_err");
  small_dataset(dir.path());
  const Outcome missing = run({"infer", "--left", p(dir.path() / "nope.ppm"), "--right",
                               p(dir.path() / "scene_0000_right.ppm"), "--out",
                               p(dir.path() / "o.pfm")});
  CHECK(missing.code == 3);
  CHECK(missing.err.find("nope.ppm") != std::string::npos);
  CHECK(run({"infer", "--left", p(dir.path() / "scene_0000_left.ppm"), "--right",
             p(dir.path() / "scene_0000_right.ppm"), "--patch-window", "4", "--out",
             p(dir.path() / "o.pfm")})
            .code == 2);
  write_file_bytes(dir.path() / "bad.ssa", std::vector<std::uint8_t>{'X', 'Y'});
  CHECK(run({"infer", "--left", p(dir.path() / "scene_0000_left.ppm"), "--right",
             p(dir.path() / "scene_0000_right.ppm"), "--weights", p(dir.path() / "bad.ssa"),
             "--out", p(dir.path() / "o.pfm")})
            .code == 3);
}

TEST_CASE("eval of ground truth against itself is error free") {
  testing::TempDir dir("cli_eval");
  small_dataset(dir.path(), 2);
  const Outcome o =
      run({"eval", "--pred-dir", p(dir.path()), "--gt-dir", p(dir.path()), "--format", "json"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto j = nlohmann::json::parse(o.out);
  CHECK(j["images"].size() == 2);
  CHECK(j["aggregate"]["absrel"].get<double>() == 0.0);
  CHECK(j["aggregate"]["rmse"].get<double>() == 0.0);
  CHECK(j["aggregate"]["delta1"].get<double>() == 1.0);
  const Outcome t = run({"eval", "--pred-dir", p(dir.path()), "--gt-dir", p(dir.path())});
  CHECK(t.code == 0);
  CHECK(t.out.find("Log RMSE") != std::string::npos);
}

TEST_CASE("eval matches the metrics oracle on random predictions") {
  testing::TempDir gt("cli_eval_gt"), pred("cli_eval_pred");
  small_dataset(gt.path());
  const Matrix<double> g = pfm_read_double(gt.path() / "scene_0000_disp.pfm");
  const Matrix<double> occ = pfm_read_double(gt.path() / "scene_0000_occ.pfm");
  Rng rng(4);
  Matrix<double> d(g.rows(), g.cols());
  for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] = g.data()[k] * rng.uniform(0.7, 1.4);
  pfm_write_narrowed(pred.path() / "scene_0000_disp.pfm", d);
  const Outcome o = run({"eval", "--pred-dir", p(pred.path()), "--gt-dir", p(gt.path()),
                         "--format", "json"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto j = nlohmann::json::parse(o.out);

  const auto bytes = read_file_bytes(gt.path() / "manifest.json");
  const auto m = nlohmann::json::parse(bytes.begin(), bytes.end());
  const CameraRig rig{m["scenes"][0]["rig"]["focal_px"].get<double>(),
                      m["scenes"][0]["rig"]["baseline_m"].get<double>()};
  const Matrix<double> dn = pfm_read_double(pred.path() / "scene_0000_disp.pfm");
  const auto zp = metrics::disparity_to_depth(dn, rig);
  const auto zg = metrics::disparity_to_depth(g, rig);
  Matrix<std::uint8_t> mask(g.rows(), g.cols());
  for (std::size_t k = 0; k < mask.size(); ++k) {
    mask.data()[k] = occ.data()[k] == 0.0 && zp.valid.data()[k] && zg.valid.data()[k];
  }
  const metrics::MetricReport r = oracle::naive_metrics(zp.z, zg.z, mask);
  const auto& a = j["aggregate"];
  CHECK(a["absrel"].get<double>() == doctest::Approx(r.absrel).epsilon(1e-10));
  CHECK(a["sqrel"].get<double>() == doctest::Approx(r.sqrel).epsilon(1e-10));
  CHECK(a["rmse"].get<double>() == doctest::Approx(r.rmse).epsilon(1e-10));
  CHECK(a["logrmse"].get<double>() == doctest::Approx(r.logrmse).epsilon(1e-10));
  CHECK(a["delta1"].get<double>() == doctest::Approx(r.delta1).epsilon(1e-10));
  CHECK(a["valid_pixel_count"].get<std::size_t>() == r.valid_pixel_count);
}

TEST_CASE("eval failures") {
  testing::TempDir gt("cli_eval_miss"), pred("cli_eval_empty");
  small_dataset(gt.path());
  const Outcome o = run({"eval", "--pred-dir", p(pred.path()), "--gt-dir", p(gt.path())});
  CHECK(o.code == 3);
  CHECK(o.err.find("scene_0000") != std::string::npos);
  fs::remove(gt.path() / "manifest.json");
  fs::copy_file(gt.path() / "scene_0000_disp.pfm", pred.path() / "scene_0000_disp.pfm");
  CHECK(run({"eval", "--pred-dir", p(pred.path()), "--gt-dir", p(gt.path())}).code == 2);
  CHECK(run({"eval", "--pred-dir", p(pred.path()), "--gt-dir", p(gt.path()), "--focal", "400",
             "--baseline", "0.3"})
            .code == 0);
}

TEST_CASE("gradcheck passes, fails at zero tolerance and is deterministic") {
  const Outcome a = run({"--seed", "5", "gradcheck", "--configs", "10"});
  CHECK_MESSAGE(a.code == 0, a.out << a.err);
  const Outcome b = run({"--seed", "5", "gradcheck", "--configs", "10"});
  CHECK(a.out == b.out);
  CHECK(run({"gradcheck", "--configs", "3", "--tol", "0"}).code == 1);
  CHECK(run({"gradcheck", "--shapes", "4x2x3,1x1x1"}).code == 0);
  CHECK(run({"gradcheck", "--shapes", "4x2"}).code == 2);
}

TEST_CASE("bench-scan reports a median per length") {
  for (const char* impl : {"seq", "par", "kernel"}) {
    const Outcome o = run({"bench-scan", "--lengths", "1024,2048,4096", "--repeat", "3",
                           "--impl", impl});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    CHECK(o.out.find("4096") != std::string::npos);
    CHECK(o.out.find("loglog_slope=") != std::string::npos);
  }
  CHECK(cli::loglog_slope({{1, 1.0}, {2, 2.0}, {4, 4.0}}) == doctest::Approx(1.0));
  CHECK(cli::default_bench_lengths().front() == 1024);
  CHECK(cli::default_bench_lengths().back() == 1u << 20);
}

TEST_CASE("selftest passes and names a corrupted golden file") {
  const Outcome ok = run({"selftest"});
  CHECK_MESSAGE(ok.code == 0, ok.out);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  testing::TempDir dir("cli_golden");
  fs::copy_file(kData / "golden_1x1.ssa", dir.path() / "golden_1x1.ssa");
  auto bytes = read_file_bytes(kData / "golden_1x1.pfm");
  bytes.back() ^= 0x01;
  write_file_bytes(dir.path() / "golden_1x1.pfm", bytes);
  const Outcome bad = run({"selftest", "--golden-dir", p(dir.path())});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL golden_pfm") != std::string::npos);
  CHECK(bad.out.find("FAIL golden_archive") == std::string::npos);
}

}  // TEST_SUITE
