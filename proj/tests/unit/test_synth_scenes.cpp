// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <cmath>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "scanstereo/errors.hpp"
#include "scanstereo/metrics.hpp"
#include "scanstereo/synth_scenes.hpp"
#include "scanstereo/tensor_io.hpp"
#include "test_util.hpp"

using namespace scanstereo;
using namespace scanstereo::synth;

namespace {

const CameraRig kRig{400.0, 0.3};

SceneSpec two_plane_spec(double d_far, double d_near, Rect r) {
  SceneSpec s;
  s.width = 320;
  s.height = 160;
  s.background_depth_m = kRig.depth(d_far);
  s.background_seed = 3;
  s.layers.push_back({kRig.depth(d_near), r, 4});
  return s;
}

}  // namespace

TEST_SUITE("synth_scenes") {

TEST_CASE("single plane at three metres has disparity forty") {
  SceneSpec s;
  s.background_depth_m = 3.0;
  const StereoPair p = render_stereo(s, kRig, 1, {true, 1});
  CHECK(p.left.dim0() == 480);
  CHECK(p.left.dim1() == 640);
  for (double d : p.gt_disp.data()) CHECK(d == doctest::Approx(40.0).epsilon(1e-12));
  // Only the left border band has no match.
  for (std::size_t y = 0; y < 480; y += 37) {
    for (std::size_t x = 0; x < 640; ++x) CHECK(p.occluded(y, x) == (x < 40 ? 1 : 0));
  }
}

TEST_CASE("nearer plane occludes a band of width d_near - d_far") {
  const Rect r{120, 40, 200, 120};
  const double d_far = 16.0, d_near = 28.0;
  const StereoPair p = render_stereo(two_plane_spec(d_far, d_near, r), kRig, 2, {true, 4});
  for (std::size_t y = r.y0; y < r.y1; ++y) {
    std::size_t band = 0;
    for (std::size_t x = static_cast<std::size_t>(d_far); x < r.x0; ++x) band += p.occluded(y, x);
    CHECK(band == static_cast<std::size_t>(d_near - d_far));
    for (std::size_t x = r.x0 - 12; x < r.x0; ++x) CHECK(p.occluded(y, x) == 1);
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      CHECK(p.gt_disp(y, x) == doctest::Approx(d_near).epsilon(1e-12));
      CHECK(p.occluded(y, x) == 0);
    }
  }
  // Rows outside the rectangle see only the border band.
  for (std::size_t x = 0; x < 320; ++x) CHECK(p.occluded(10, x) == (x < d_far ? 1 : 0));
}

TEST_CASE("photometric consistency is exact in integer mode") {
  const StereoPair p =
      render_stereo(two_plane_spec(12.0, 32.0, {100, 20, 180, 100}), kRig, 3, {true, 4});
  std::size_t checked = 0;
  for (std::size_t y = 0; y < p.left.dim0(); ++y) {
    for (std::size_t x = 0; x < p.left.dim1(); ++x) {
      if (p.occluded(y, x)) continue;
      const auto xr = static_cast<std::size_t>(static_cast<double>(x) - p.gt_disp(y, x));
      for (std::size_t c = 0; c < 3; ++c) {
        if (p.left(y, x, c) != p.right(y, xr, c)) {
          FAIL_CHECK("mismatch at " << y << "," << x);
        }
      }
      ++checked;
    }
  }
  CHECK(checked > 40000);
}

TEST_CASE("integer mode snaps disparities to the quantum") {
  SceneSpec s;
  s.width = 160;
  s.height = 64;
  s.background_depth_m = 3.7;
  const StereoPair p = render_stereo(s, kRig, 4, {true, 4});
  const double d = p.gt_disp(0, 0);
  CHECK(std::fabs(d / 4.0 - std::round(d / 4.0)) <= 1e-12);
  CHECK(snap_depth(3.7, kRig, 4) == doctest::Approx(kRig.depth(32.0)));
  CHECK_THROWS_AS(snap_depth(3.7, kRig, 0), ConfigError);
}

TEST_CASE("textures vary so that neighbouring columns differ") {
  SceneSpec s;
  s.width = 160;
  s.height = 64;
  const StereoPair p = render_stereo(s, kRig, 5);
  std::size_t equal = 0;
  for (std::size_t x = 1; x < 160; ++x) equal += p.left(30, x, 1) == p.left(30, x - 1, 1);
  CHECK(equal < 5);
  for (double v : p.left.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("too-large disparities are rejected") {
  SceneSpec s;
  s.width = 64;
  s.height = 32;
  s.background_depth_m = kRig.depth(70.0);  // limit (64 / 4 - 1) * 4 = 60
  CHECK_THROWS_AS(render_stereo(s, kRig, 1), ConfigError);
  s.background_depth_m = kRig.depth(60.0);
  CHECK_NOTHROW(render_stereo(s, kRig, 1));
  s.width = 60;
  CHECK_THROWS_AS(render_stereo(s, kRig, 1), ConfigError);
  CHECK_THROWS_AS(render_stereo(SceneSpec{}, CameraRig{0.0, 0.3}, 1), ConfigError);
}

TEST_CASE("underwater model limits") {
  Rng rng(6);
  Image img(4, 4, 3);
  for (auto& v : img.data()) v = rng.uniform();
  UnderwaterParams p;
  p.beta = {0.4, 0.1, 0.05};
  p.veil = {0.1, 0.4, 0.5};
  CHECK(apply_underwater(img, Matrix<double>(4, 4, 0.0), p) == img);
  UnderwaterParams clear;
  clear.veil = p.veil;
  CHECK(apply_underwater(img, Matrix<double>(4, 4, 7.0), clear) == img);

  double prev_gap = 1e9;
  for (double z : {1.0, 10.0, 100.0, 1000.0}) {
    const Image w = apply_underwater(img, Matrix<double>(4, 4, z), p);
    double gap = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 3; ++c) gap = std::max(gap, std::fabs(w(i, j, c) - p.veil[c]));
    CHECK(gap <= prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap <= 1e-9);
  UnderwaterParams bad;
  bad.veil = {0.0, 1.5, 0.0};
  CHECK_THROWS_AS(apply_underwater(img, Matrix<double>(4, 4, 1.0), bad), ConfigError);
}

TEST_CASE("sampled scenes respect the disparity range and baseline set") {
  Rng rng(7);
  SamplerOptions opts;
  const std::set<double> baselines(kRigBaselines.begin(), kRigBaselines.end());
  for (int k = 0; k < 20; ++k) {
    const SampledScene s = sample_scene(rng, opts);
    CHECK(baselines.count(s.rig.baseline_m) == 1);
    const StereoPair p = render_stereo(s.spec, s.rig, 100 + k, {true, 4});
    for (double d : p.gt_disp.data()) {
      CHECK(d >= 0.0);
      CHECK(d <= (640.0 / 4.0 - 1.0) * 4.0);
    }
  }
}

TEST_CASE("depth round trip reproduces the disparity") {
  Rng rng(8);
  SamplerOptions opts;
  opts.width = 160;
  opts.height = 96;
  const SampledScene s = sample_scene(rng, opts);
  const StereoPair p = render_stereo(s.spec, s.rig, 1);
  const metrics::DepthMap z = metrics::disparity_to_depth(p.gt_disp, s.rig);
  const metrics::DepthMap d = metrics::depth_to_disparity(z.z, s.rig);
  for (std::size_t k = 0; k < z.z.size(); ++k) {
    REQUIRE(z.valid.data()[k] == 1);
    CHECK(std::fabs(d.z.data()[k] - p.gt_disp.data()[k]) <= 1e-6);
    CHECK(z.z.data()[k] == doctest::Approx(p.depth_left.data()[k]).epsilon(1e-12));
  }
}

TEST_CASE("dataset of one scene writes four files and a manifest") {
  testing::TempDir dir("synth1");
  DatasetOptions opts;
  opts.seed = 9;
  opts.sampler.width = 160;
  opts.sampler.height = 96;
  const std::string text = dataset_emit(1, dir.path(), opts);
  std::set<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    files.insert(e.path().filename().string());
  }
  CHECK(files == std::set<std::string>{"scene_0000_left.ppm", "scene_0000_right.ppm",
                                       "scene_0000_disp.pfm", "scene_0000_occ.pfm",
                                       "manifest.json"});
  const auto m = nlohmann::json::parse(text);
  REQUIRE(m["scenes"].size() == 1);
  CHECK(m["scenes"][0]["files"]["left"] == "scene_0000_left.ppm");
  CHECK(m["master_seed"] == 9);
  CHECK(m["scenes"][0]["underwater"].is_null());
  const Matrix<float> disp = pfm_read(dir.path() / "scene_0000_disp.pfm");
  CHECK(disp.rows() == 96);
  CHECK(disp.cols() == 160);
}

TEST_CASE("dataset emission is byte-deterministic and records rigs") {
  testing::TempDir a("synth_a"), b("synth_b");
  DatasetOptions opts;
  opts.seed = 10;
  opts.sampler.width = 160;
  opts.sampler.height = 96;
  opts.random_underwater = true;
  dataset_emit(6, a.path(), opts);
  dataset_emit(6, b.path(), opts);
  std::size_t compared = 0;
  for (const auto& e : std::filesystem::directory_iterator(a.path())) {
    const auto name = e.path().filename();
    CHECK(read_file_bytes(e.path()) == read_file_bytes(b.path() / name));
    ++compared;
  }
  CHECK(compared == 6 * 4 + 1);
  const auto bytes = read_file_bytes(a.path() / "manifest.json");
  const auto m = nlohmann::json::parse(bytes.begin(), bytes.end());
  const std::set<double> baselines(kRigBaselines.begin(), kRigBaselines.end());
  for (const auto& s : m["scenes"]) {
    CHECK(baselines.count(s["rig"]["baseline_m"].get<double>()) == 1);
    CHECK(s["underwater"]["beta"].size() == 3);
  }
}

TEST_CASE("dataset errors carry the path") {
  testing::TempDir dir("synth_err");
  const auto blocker = dir.path() / "file";
  write_file_bytes(blocker, std::vector<std::uint8_t>{1});
  try {
    dataset_emit(1, blocker / "sub", {});
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.path().find("file") != std::string::npos);
  }
}

}  // TEST_SUITE
