// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "scanstereo/errors.hpp"
#include "scanstereo/ssm_core.hpp"
#include "scanstereo/tensor_io.hpp"

using namespace scanstereo;
using namespace scanstereo::ssm;

namespace {

double max_abs_diff(const Matrix<double>& a, const Matrix<double>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_SUITE("ssm_core") {

TEST_CASE("softplus at zero and projection closed forms") {
  SelectiveParams<double> p = zero_params(3, 2);
  const std::vector<double> x0(3, 0.0);
  const Projection pr0 = project_selective<double>(x0, p);
  for (double d : pr0.delta) CHECK(d == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  p.b_delta = {1.0, -1.0, 1.0};
  const std::vector<double> xr = {0.3, -2.0, 5.0};
  const Projection pr = project_selective<double>(xr, p);
  CHECK(pr.delta[0] == doctest::Approx(1.313262).epsilon(1e-6));
  CHECK(pr.delta[1] == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(pr.delta[2] == doctest::Approx(1.313262).epsilon(1e-6));
}

TEST_CASE("projection of a basis vector picks the first column of w_b") {
  SelectiveParams<double> p = zero_params(3, 4);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t c = 0; c < 3; ++c) p.w_b(n, c) = n == c ? 1.0 : 0.25 * static_cast<double>(n + c);
  }
  const std::vector<double> e1 = {1.0, 0.0, 0.0};
  const Projection pr = project_selective<double>(e1, p);
  for (std::size_t n = 0; n < 4; ++n) CHECK(pr.b[n] == p.w_b(n, 0));
}

TEST_CASE("projection rejects a wrong-sized input") {
  const SelectiveParams<double> p = zero_params(3, 2);
  const std::vector<double> x(2, 0.0);
  CHECK_THROWS_AS(project_selective<double>(x, p), ShapeError);
}

TEST_CASE("discretize closed forms") {
  const Discretized a = discretize(std::log(2.0), -1.0, 1.0);
  CHECK(a.a_bar == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.b_bar == doctest::Approx(0.5).epsilon(1e-15));

  const Discretized b = discretize(0.5, -2.0, 1.0);
  CHECK(b.a_bar == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(b.b_bar == doctest::Approx(0.316060).epsilon(1e-6));

  const Discretized lim = discretize(0.7, 0.0, 2.0);
  CHECK(lim.a_bar == 1.0);
  CHECK(lim.b_bar == doctest::Approx(1.4).epsilon(1e-15));
}

TEST_CASE("series branch is continuous at the threshold") {
  for (double sign : {-1.0, 1.0}) {
    const double u = sign * kSeriesThreshold;
    const double below = zoh_factor(std::nextafter(u, 0.0));
    const double above = zoh_factor(std::nextafter(u, sign * 1.0));
    const double exact = std::expm1(u) / u;
    CHECK(std::fabs(below - exact) <= 1e-10);
    CHECK(std::fabs(above - exact) <= 1e-10);
    CHECK(std::fabs(below - above) <= 1e-10);
  }
}

TEST_CASE("zoh derivative matches finite differences on both branches") {
  for (double u : {-3.0, -0.5, -2e-3, -5e-4, -5e-5, 0.0, 3e-5, 0.2}) {
    const double h = 1e-6;
    const double fd = (zoh_factor(u + h) - zoh_factor(u - h)) / (2.0 * h);
    CHECK(zoh_factor_derivative(u) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("discretize error paths") {
  CHECK_THROWS_AS(discretize(std::numeric_limits<double>::quiet_NaN(), -1.0, 1.0), NumericError);
  CHECK_THROWS_AS(discretize(0.1, std::numeric_limits<double>::infinity(), 1.0), NumericError);
  CHECK_THROWS_AS(discretize(0.0, -1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(discretize(-0.1, -1.0, 1.0), ConfigError);
}

TEST_CASE("params validation") {
  SelectiveParams<double> p = zero_params(2, 3);
  CHECK_NOTHROW(p.validate());
  p.a_diag(1, 2) = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = zero_params(2, 3);
  p.w_c(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(p.validate(), NumericError);
  p = zero_params(2, 3);
  p.b_delta.pop_back();
  CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("seeded initialization ranges and determinism") {
  const SelectiveParams<double> a = make_selective_params(8, 4, 42);
  const SelectiveParams<double> b = make_selective_params(8, 4, 42);
  CHECK(a.w_delta == b.w_delta);
  CHECK(a.b_delta == b.b_delta);
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t n = 0; n < 4; ++n) CHECK(a.a_diag(c, n) == -static_cast<double>(n + 1));
    const double d = softplus(a.b_delta[c]);
    CHECK(d >= 1e-3 * (1 - 1e-12));
    CHECK(d <= 1e-1 * (1 + 1e-12));
    CHECK(a.d_skip[c] == 0.0);
  }
}

TEST_CASE("zero input gives zero output for any skip") {
  SelectiveParams<double> p = make_selective_params(3, 4, 1);
  p.d_skip = {0.5, -2.0, 3.0};
  const Matrix<double> x(17, 3, 0.0);
  const auto r = scan_sequential(x, p);
  const auto q = scan_parallel(x, p);
  for (double v : r.y.data()) CHECK(v == 0.0);
  for (double v : q.y.data()) CHECK(v == 0.0);
}

TEST_CASE("single step unrolling") {
  Rng rng(3);
  auto cfg = oracle::random_scan_config(rng, 1, 3, 4, false);
  const auto r = scan_sequential(cfg.x, cfg.params);
  const std::vector<double> x0(cfg.x.row(0).begin(), cfg.x.row(0).end());
  const Projection pr = project_selective<double>(x0, cfg.params);
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    double expect = cfg.params.d_skip[c] * x0[c];
    for (std::size_t n = 0; n < cfg.state_dim; ++n) {
      const Discretized d = discretize(pr.delta[c], cfg.params.a_diag(c, n), pr.b[n]);
      expect += pr.c[n] * d.b_bar * x0[c];
    }
    CHECK(r.y(0, c) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(max_abs_diff(scan_parallel(cfg.x, cfg.params).y, r.y) == 0.0);
}

TEST_CASE("sequential scan agrees with the literal oracle") {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto cfg = oracle::random_scan_config(rng, 300, 5, 5, false);
    CHECK(max_abs_diff(scan_sequential(cfg.x, cfg.params).y, oracle::naive_scan(cfg.x, cfg.params)) <=
          1e-10);
  }
}

TEST_CASE("parallel scan matches sequential on random configurations") {
  Rng rng(7);
  for (int k = 0; k < 200; ++k) {
    const auto cfg = oracle::random_scan_config(rng, 700, 6, 6, k % 3 == 0);
    const auto s = scan_sequential(cfg.x, cfg.params, cfg.h_init);
    const auto p = scan_parallel(cfg.x, cfg.params, cfg.h_init);
    CHECK(max_abs_diff(s.y, p.y) <= 1e-12);
    CHECK(max_abs_diff(s.h_final, p.h_final) <= 1e-12);
  }
}

TEST_CASE("single precision storage stays within 1e-5 of sequential") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const auto cfg = oracle::random_scan_config(rng, 500, 4, 4, false);
    const auto pf = cfg.params.cast<float>();
    Matrix<float> xf(cfg.x.rows(), cfg.x.cols());
    for (std::size_t i = 0; i < xf.size(); ++i) xf.data()[i] = static_cast<float>(cfg.x.data()[i]);
    const auto s = scan_sequential(xf, pf).y;
    const auto p = scan_parallel(xf, pf).y;
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::fabs(s.data()[i] - p.data()[i]) <= 1e-5);
  }
}

TEST_CASE("affine composition is associative") {
  Rng rng(9);
  for (int k = 0; k < 1000; ++k) {
    const AffineStep a{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const AffineStep b{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const AffineStep c{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const AffineStep l = compose(compose(a, b), c);
    const AffineStep r = compose(a, compose(b, c));
    CHECK(std::fabs(l.a - r.a) <= 1e-12);
    CHECK(std::fabs(l.b - r.b) <= 1e-12);
  }
}

TEST_CASE("exclusive scan produces prefix compositions") {
  Rng rng(10);
  std::vector<AffineStep> steps(64);
  for (auto& s : steps) s = {rng.uniform(0, 1), rng.uniform(-1, 1)};
  std::vector<AffineStep> scanned = steps;
  exclusive_scan(scanned);
  AffineStep acc;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    CHECK(scanned[t].a == doctest::Approx(acc.a).epsilon(1e-13));
    CHECK(scanned[t].b == doctest::Approx(acc.b).epsilon(1e-13));
    acc = compose(acc, steps[t]);
  }
  std::vector<AffineStep> bad(6);
  CHECK_THROWS_AS(exclusive_scan(bad), ShapeError);
}

TEST_CASE("lti kernel closed forms") {
  const std::vector<double> a = {0.5, 0.25}, b = {1.0, 2.0}, c = {3.0, -1.0};
  const auto k1 = lti_kernel(a, b, c, 1);
  REQUIRE(k1.size() == 1);
  CHECK(k1[0] == doctest::Approx(3.0 * 1.0 - 1.0 * 2.0));
  const std::vector<double> zero = {0.0, 0.0};
  const auto k0 = lti_kernel(zero, b, c, 5);
  CHECK(k0[0] == doctest::Approx(1.0));
  for (std::size_t t = 1; t < 5; ++t) CHECK(k0[t] == 0.0);
  const auto k = lti_kernel(a, b, c, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(k[t] == doctest::Approx(3.0 * std::pow(0.5, t) - 2.0 * std::pow(0.25, t)));
  }
}

TEST_CASE("fft convolution matches the direct sum") {
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    const auto L = static_cast<std::size_t>(rng.uniform_int(1, 300));
    std::vector<double> x(L), ker(L);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : ker) v = rng.uniform(-1, 1);
    const auto a = fft_causal_convolve(x, ker);
    const auto b = oracle::direct_convolution(x, ker);
    for (std::size_t t = 0; t < L; ++t) CHECK(std::fabs(a[t] - b[t]) <= 1e-12);
  }
}

TEST_CASE("time-invariant recurrence equals convolution with the kernel") {
  Rng rng(12);
  for (int k = 0; k < 50; ++k) {
    const auto cfg = oracle::random_lti_config(rng, 400, 4, 4);
    REQUIRE(is_time_invariant(cfg.params));
    CHECK(max_abs_diff(scan_sequential(cfg.x, cfg.params).y, scan_lti_kernel(cfg.x, cfg.params)) <=
          1e-12);

    // Same comparison through the brute-force convolution oracle.
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const std::vector<double> zeros(cfg.channels, 0.0);
      const Projection pr = project_selective<double>(zeros, cfg.params);
      std::vector<double> ab(cfg.state_dim), bb(cfg.state_dim);
      for (std::size_t n = 0; n < cfg.state_dim; ++n) {
        const Discretized d = discretize(pr.delta[c], cfg.params.a_diag(c, n), pr.b[n]);
        ab[n] = d.a_bar;
        bb[n] = d.b_bar;
      }
      auto ker = lti_kernel(ab, bb, pr.c, cfg.length);
      ker[0] += cfg.params.d_skip[c];
      std::vector<double> xc(cfg.length);
      for (std::size_t t = 0; t < cfg.length; ++t) xc[t] = cfg.x(t, c);
      const auto yc = oracle::direct_convolution(xc, ker);
      const auto ys = scan_sequential(cfg.x, cfg.params).y;
      for (std::size_t t = 0; t < cfg.length; ++t) CHECK(std::fabs(yc[t] - ys(t, c)) <= 1e-12);
    }
  }
}

TEST_CASE("kernel route rejects selective params") {
  Rng rng(13);
  const auto cfg = oracle::random_scan_config(rng, 20, 2, 2, false);
  CHECK_THROWS_AS(scan_lti_kernel(cfg.x, cfg.params), ConfigError);
}

TEST_CASE("scan errors") {
  const SelectiveParams<double> p = zero_params(2, 2);
  CHECK_THROWS_AS(scan_sequential(Matrix<double>(0, 2), p), ShapeError);
  CHECK_THROWS_AS(scan_sequential(Matrix<double>(4, 3), p), ShapeError);
  CHECK_THROWS_AS(scan_parallel(Matrix<double>(4, 3), p), ShapeError);
  CHECK_THROWS_AS(scan_sequential(Matrix<double>(4, 2), p, Matrix<double>(1, 1)), ShapeError);

  Matrix<double> x(10, 2, 0.1);
  x(6, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(scan_sequential(x, p), NumericError);

  // Overflow in the recurrence is reported with the first offending step.
  SelectiveParams<double> big = zero_params(1, 1);
  big.b_delta = {200.0};
  big.a_diag(0, 0) = -1e-300;
  big.b_bias = {1e300};
  big.c_bias = {1.0};
  Matrix<double> ones(5, 1, 1e10);
  try {
    (void)scan_sequential(ones, big);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.index() == 0);
  }
}

TEST_CASE("stability over a million steps") {
  SelectiveParams<double> p = zero_params(1, 4);
  p.b_delta = {0.5};
  p.b_bias = {1.0, -0.5, 0.25, 2.0};
  p.c_bias = {1.0, 1.0, 1.0, 1.0};
  Rng rng(14);
  const std::size_t L = 1'000'000;
  Matrix<double> x(L, 1);
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
  const auto r = scan_sequential(x, p);
  const std::vector<double> zeros(1, 0.0);
  const Projection pr = project_selective<double>(zeros, p);
  for (std::size_t n = 0; n < 4; ++n) {
    const Discretized d = discretize(pr.delta[0], p.a_diag(0, n), pr.b[n]);
    const double bound = std::fabs(d.b_bar) / (1.0 - d.a_bar);
    CHECK(std::fabs(r.h_final(0, n)) <= bound * (1 + 1e-12));
  }
  for (double v : r.y.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("backward pass: zero and scaled upstream gradients") {
  Rng rng(15);
  const auto cfg = oracle::random_scan_config(rng, 8, 3, 4, true);
  const Matrix<double> zero(cfg.length, cfg.channels, 0.0);
  const ScanGradients g0 = scan_backward(cfg.x, cfg.params, cfg.h_init, zero);
  for (double v : g0.x.data()) CHECK(v == 0.0);
  for (double v : g0.a_diag.data()) CHECK(v == 0.0);
  for (double v : g0.w_delta.data()) CHECK(v == 0.0);
  for (double v : g0.h_init.data()) CHECK(v == 0.0);

  Matrix<double> gy(cfg.length, cfg.channels);
  for (auto& v : gy.data()) v = rng.uniform(-1, 1);
  Matrix<double> gy3 = gy;
  for (auto& v : gy3.data()) v *= 3.0;
  const ScanGradients a = scan_backward(cfg.x, cfg.params, cfg.h_init, gy);
  const ScanGradients b = scan_backward(cfg.x, cfg.params, cfg.h_init, gy3);
  for (std::size_t i = 0; i < a.w_b.size(); ++i) {
    CHECK(b.w_b.data()[i] == doctest::Approx(3.0 * a.w_b.data()[i]).epsilon(1e-13));
  }
  for (std::size_t i = 0; i < a.x.size(); ++i) {
    CHECK(b.x.data()[i] == doctest::Approx(3.0 * a.x.data()[i]).epsilon(1e-13));
  }
}

TEST_CASE("backward pass matches central differences") {
  Rng rng(16);
  for (int k = 0; k < 20; ++k) {
    const auto cfg = oracle::random_scan_config(rng, 8, 3, 4, k % 2 == 0);
    Matrix<double> gy(cfg.length, cfg.channels);
    for (auto& v : gy.data()) v = rng.uniform(-1, 1);
    const auto r = oracle::gradient_check(cfg, gy, 1e-5);
    INFO("worst " << r.worst_parameter);
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("backward pass covers the series branch") {
  SelectiveParams<double> p = zero_params(2, 2);
  p.b_delta = {-12.0, -11.0};  // delta ~ 1e-5, so |delta a| < 1e-4
  p.b_bias = {0.5, -0.3};
  p.c_bias = {0.7, 0.2};
  p.w_delta(0, 1) = 0.3;
  p.w_b(1, 0) = 0.4;
  p.w_c(0, 1) = -0.6;
  oracle::ScanConfig cfg{5, 2, 2, p, Matrix<double>(5, 2), Matrix<double>()};
  Rng rng(17);
  for (auto& v : cfg.x.data()) v = rng.uniform(-1, 1);
  Matrix<double> gy(5, 2);
  for (auto& v : gy.data()) v = rng.uniform(-1, 1);
  CHECK(oracle::gradient_check(cfg, gy, 1e-7).max_rel_error <= 1e-5);
}

TEST_CASE("params archive round trip") {
  const SelectiveParams<double> p = make_selective_params(3, 4, 99);
  TensorArchive a;
  save_params(a, "ssm.", p);
  for (const char* name : {"ssm.a_diag", "ssm.w_delta", "ssm.b_delta", "ssm.w_b", "ssm.w_c",
                           "ssm.d_skip"}) {
    CHECK(a.contains(name));
  }
  const SelectiveParams<double> q = load_params(TensorArchive::deserialize(a.serialize()), "ssm.");
  for (std::size_t i = 0; i < p.w_b.size(); ++i) {
    CHECK(q.w_b.data()[i] == static_cast<double>(static_cast<float>(p.w_b.data()[i])));
  }
  CHECK(q.channels() == 3);
  CHECK(q.state_dim() == 4);
}

TEST_CASE("defaults") {
  CHECK(kDefaultStateDim == 4);
  CHECK(kDefaultSsmRatio == 1.0);
}

}  // TEST_SUITE
