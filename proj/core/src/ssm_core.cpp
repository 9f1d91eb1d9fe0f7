// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/ssm_core.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <mutex>

#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/tensor_io.hpp"

namespace scanstereo::ssm {
namespace {

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
void require_finite(std::span<const T> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError(std::string(what) + " is not finite", i);
  }
}

template <typename T>
void check_shape(const Matrix<T>& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + " x " +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + " x " +
                     std::to_string(m.cols()));
  }
}

template <typename T>
void check_size(const std::vector<T>& v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(n) +
                     ", got " + std::to_string(v.size()));
  }
}

template <typename T>
void check_scan_inputs(const Matrix<T>& x, const SelectiveParams<T>& p,
                       const Matrix<T>& h_init) {
  p.validate();
  if (x.rows() == 0) throw ShapeError("scan: sequence length must be >= 1");
  if (x.cols() != p.channels()) {
    throw ShapeError("scan: input has " + std::to_string(x.cols()) +
                     " channels, params expect " + std::to_string(p.channels()));
  }
  require_finite(std::span<const T>(x.data()), "scan input");
  if (!h_init.empty()) {
    check_shape(h_init, p.channels(), p.state_dim(), "scan h_init");
    require_finite(std::span<const T>(h_init.data()), "scan h_init");
  }
}

double initial_state(const Matrix<double>& h0, std::size_t c, std::size_t n) {
  return h0.empty() ? 0.0 : h0(c, n);
}

template <typename T>
Matrix<double> to_double(const Matrix<T>& m) {
  return Matrix<double>(m.rows(), m.cols(),
                        std::vector<double>(m.data().begin(), m.data().end()));
}

template <typename T>
Matrix<T> from_double(const Matrix<double>& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return Matrix<T>(m.rows(), m.cols(),
                     std::vector<T>(m.data().begin(), m.data().end()));
  }
}

// Projections for every step of a sequence, row t holding delta / B / C.
struct ProjectionTable {
  Matrix<double> delta;  // L x C
  Matrix<double> b;      // L x N
  Matrix<double> c;      // L x N
};

template <typename T>
ProjectionTable project_all(const Matrix<T>& x, const SelectiveParams<T>& p) {
  const std::size_t L = x.rows();
  ProjectionTable tab{Matrix<double>(L, p.channels()), Matrix<double>(L, p.state_dim()),
                      Matrix<double>(L, p.state_dim())};
  parallel_for(
      L,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
          Projection pr = project_selective<T>(x.row(t), p);
          std::copy(pr.delta.begin(), pr.delta.end(), tab.delta.row(t).begin());
          std::copy(pr.b.begin(), pr.b.end(), tab.b.row(t).begin());
          std::copy(pr.c.begin(), pr.c.end(), tab.c.row(t).begin());
        }
      },
      256);
  return tab;
}

std::size_t next_pow2(std::size_t n) { return std::bit_ceil(std::max<std::size_t>(n, 1)); }

}  // namespace

template <typename T>
void SelectiveParams<T>::validate() const {
  const std::size_t C = channels();
  const std::size_t N = state_dim();
  if (C == 0 || N == 0) throw ShapeError("SelectiveParams: empty a_diag");
  check_shape(w_delta, C, C, "w_delta");
  check_size(b_delta, C, "b_delta");
  check_shape(w_b, N, C, "w_b");
  check_size(b_bias, N, "b_bias");
  check_shape(w_c, N, C, "w_c");
  check_size(c_bias, N, "c_bias");
  check_size(d_skip, C, "d_skip");
  require_finite(std::span<const T>(a_diag.data()), "a_diag");
  require_finite(std::span<const T>(w_delta.data()), "w_delta");
  require_finite(std::span<const T>(b_delta), "b_delta");
  require_finite(std::span<const T>(w_b.data()), "w_b");
  require_finite(std::span<const T>(b_bias), "b_bias");
  require_finite(std::span<const T>(w_c.data()), "w_c");
  require_finite(std::span<const T>(c_bias), "c_bias");
  require_finite(std::span<const T>(d_skip), "d_skip");
  for (std::size_t i = 0; i < a_diag.size(); ++i) {
    if (!(a_diag.data()[i] < T(0))) {
      throw ConfigError("a_diag entry " + std::to_string(i) + " must be strictly negative");
    }
  }
}

template <typename T>
template <typename U>
SelectiveParams<U> SelectiveParams<T>::cast() const {
  auto cm = [](const Matrix<T>& m) {
    return Matrix<U>(m.rows(), m.cols(), std::vector<U>(m.data().begin(), m.data().end()));
  };
  auto cv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
  return SelectiveParams<U>{cm(a_diag), cm(w_delta), cv(b_delta), cm(w_b),
                            cv(b_bias), cm(w_c),     cv(c_bias),  cv(d_skip)};
}

template struct SelectiveParams<float>;
template struct SelectiveParams<double>;
template SelectiveParams<float> SelectiveParams<double>::cast<float>() const;
template SelectiveParams<double> SelectiveParams<float>::cast<double>() const;
template SelectiveParams<double> SelectiveParams<double>::cast<double>() const;

SelectiveParams<double> zero_params(std::size_t channels, std::size_t state_dim) {
  SelectiveParams<double> p{Matrix<double>(channels, state_dim),
                            Matrix<double>(channels, channels),
                            std::vector<double>(channels, 0.0),
                            Matrix<double>(state_dim, channels),
                            std::vector<double>(state_dim, 0.0),
                            Matrix<double>(state_dim, channels),
                            std::vector<double>(state_dim, 0.0),
                            std::vector<double>(channels, 0.0)};
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < state_dim; ++n) p.a_diag(c, n) = -static_cast<double>(n + 1);
  }
  return p;
}

SelectiveParams<double> make_selective_params(std::size_t channels, std::size_t state_dim,
                                              std::uint64_t seed) {
  Rng rng(seed);
  SelectiveParams<double> p = zero_params(channels, state_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  for (auto& v : p.w_delta.data()) v = 0.1 * rng.uniform(-bound, bound);
  for (auto& v : p.b_delta) {
    // Inverse softplus of a log-uniform target in [1e-3, 1e-1].
    const double target = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = target + std::log(-std::expm1(-target));
  }
  for (auto& v : p.w_b.data()) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_c.data()) v = rng.uniform(-bound, bound);
  const double state_bound = 1.0 / std::sqrt(static_cast<double>(state_dim));
  for (auto& v : p.b_bias) v = rng.uniform(-state_bound, state_bound);
  for (auto& v : p.c_bias) v = rng.uniform(-state_bound, state_bound);
  return p;
}

void save_params(TensorArchive& archive, const std::string& prefix,
                 const SelectiveParams<double>& p) {
  p.validate();
  put_matrix(archive, prefix + "a_diag", p.a_diag);
  put_matrix(archive, prefix + "w_delta", p.w_delta);
  put_vector(archive, prefix + "b_delta", p.b_delta);
  put_matrix(archive, prefix + "w_b", p.w_b);
  put_vector(archive, prefix + "b_bias", p.b_bias);
  put_matrix(archive, prefix + "w_c", p.w_c);
  put_vector(archive, prefix + "c_bias", p.c_bias);
  put_vector(archive, prefix + "d_skip", p.d_skip);
}

SelectiveParams<double> load_params(const TensorArchive& archive, const std::string& prefix) {
  const NamedTensor& a = archive.get(prefix + "a_diag");
  if (a.dims.size() != 2) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch, prefix + "a_diag must be rank 2");
  }
  const std::size_t C = a.dims[0];
  const std::size_t N = a.dims[1];
  SelectiveParams<double> p{get_matrix(archive, prefix + "a_diag", C, N),
                            get_matrix(archive, prefix + "w_delta", C, C),
                            get_vector(archive, prefix + "b_delta", C),
                            get_matrix(archive, prefix + "w_b", N, C),
                            get_vector(archive, prefix + "b_bias", N),
                            get_matrix(archive, prefix + "w_c", N, C),
                            get_vector(archive, prefix + "c_bias", N),
                            get_vector(archive, prefix + "d_skip", C)};
  p.validate();
  return p;
}

double softplus(double z) {
  // log(1 + e^z) without overflow for large z.
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename T>
Projection project_selective(std::span<const T> x_t, const SelectiveParams<T>& p) {
  const std::size_t C = p.channels();
  const std::size_t N = p.state_dim();
  if (x_t.size() != C) {
    throw ShapeError("project_selective: input length " + std::to_string(x_t.size()) +
                     " != channels " + std::to_string(C));
  }
  Projection out{std::vector<double>(C), std::vector<double>(N), std::vector<double>(N)};
  for (std::size_t c = 0; c < C; ++c) {
    double z = p.b_delta[c];
    for (std::size_t j = 0; j < C; ++j) z += double(p.w_delta(c, j)) * double(x_t[j]);
    out.delta[c] = softplus(z);
  }
  for (std::size_t n = 0; n < N; ++n) {
    double b = p.b_bias[n];
    double cc = p.c_bias[n];
    for (std::size_t j = 0; j < C; ++j) {
      b += double(p.w_b(n, j)) * double(x_t[j]);
      cc += double(p.w_c(n, j)) * double(x_t[j]);
    }
    out.b[n] = b;
    out.c[n] = cc;
  }
  return out;
}

template Projection project_selective<float>(std::span<const float>,
                                             const SelectiveParams<float>&);
template Projection project_selective<double>(std::span<const double>,
                                              const SelectiveParams<double>&);

double zoh_factor(double u) {
  if (std::abs(u) < kSeriesThreshold) return 1.0 + u / 2.0 + u * u / 6.0;
  return std::expm1(u) / u;
}

double zoh_factor_derivative(double u) {
  if (std::abs(u) < kSeriesThreshold) return 0.5 + u / 3.0;
  if (std::abs(u) < 1e-3) {
    // Taylor series of (u e^u - e^u + 1) / u^2; the closed form loses digits here.
    return 0.5 + u / 3.0 + u * u / 8.0 + u * u * u / 30.0;
  }
  return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

Discretized discretize(double delta, double a, double b) {
  if (!std::isfinite(delta)) throw NumericError("discretize: delta is not finite", 0);
  if (!std::isfinite(a)) throw NumericError("discretize: a is not finite", 1);
  if (!std::isfinite(b)) throw NumericError("discretize: b is not finite", 2);
  if (!(delta > 0.0)) throw ConfigError("discretize: delta must be positive");
  const double u = delta * a;
  return {std::exp(u), zoh_factor(u) * delta * b};
}

template <typename T>
ScanResult<T> scan_sequential(const Matrix<T>& x, const SelectiveParams<T>& p,
                              const Matrix<T>& h_init) {
  check_scan_inputs(x, p, h_init);
  const std::size_t L = x.rows();
  const std::size_t C = p.channels();
  const std::size_t N = p.state_dim();

  Matrix<double> h(C, N);
  if (!h_init.empty()) h = to_double(h_init);
  Matrix<T> y(L, C);

  for (std::size_t t = 0; t < L; ++t) {
    const auto x_t = x.row(t);
    const Projection pr = project_selective<T>(x_t, p);
    bool finite = true;
    for (std::size_t c = 0; c < C; ++c) {
      const double xc = x_t[c];
      const double delta = pr.delta[c];
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double u = delta * double(p.a_diag(c, n));
        const double a_bar = std::exp(u);
        const double b_bar = zoh_factor(u) * delta * pr.b[n];
        h(c, n) = a_bar * h(c, n) + b_bar * xc;
        acc += pr.c[n] * h(c, n);
      }
      acc += double(p.d_skip[c]) * xc;
      finite = finite && std::isfinite(acc);
      y(t, c) = static_cast<T>(acc);
    }
    if (!finite || !all_finite(std::span<const double>(h.data()))) {
      throw NumericError("scan_sequential: non-finite state", t);
    }
  }
  return {std::move(y), from_double<T>(h)};
}

template ScanResult<float> scan_sequential(const Matrix<float>&, const SelectiveParams<float>&,
                                           const Matrix<float>&);
template ScanResult<double> scan_sequential(const Matrix<double>&,
                                            const SelectiveParams<double>&,
                                            const Matrix<double>&);

void exclusive_scan(std::span<AffineStep> steps) {
  const std::size_t n = steps.size();
  if (n == 0) return;
  if (!std::has_single_bit(n)) throw ShapeError("exclusive_scan: size must be a power of two");

  constexpr std::size_t kMinChunk = 8192;
  // Up-sweep: node (i + 2d - 1) accumulates its left sibling at (i + d - 1).
  for (std::size_t d = 1; d < n; d *= 2) {
    const std::size_t pairs = n / (2 * d);
    parallel_for(
        pairs,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t k = b; k < e; ++k) {
            const std::size_t i = k * 2 * d;
            steps[i + 2 * d - 1] = compose(steps[i + d - 1], steps[i + 2 * d - 1]);
          }
        },
        kMinChunk);
  }
  steps[n - 1] = AffineStep{};
  // Down-sweep: left child takes the parent prefix, right child the prefix
  // extended by the left subtree.
  for (std::size_t d = n / 2; d >= 1; d /= 2) {
    const std::size_t pairs = n / (2 * d);
    parallel_for(
        pairs,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t k = b; k < e; ++k) {
            const std::size_t i = k * 2 * d;
            const AffineStep left = steps[i + d - 1];
            steps[i + d - 1] = steps[i + 2 * d - 1];
            steps[i + 2 * d - 1] = compose(steps[i + 2 * d - 1], left);
          }
        },
        kMinChunk);
    if (d == 1) break;
  }
}

template <typename T>
ScanResult<T> scan_parallel(const Matrix<T>& x, const SelectiveParams<T>& p,
                            const Matrix<T>& h_init) {
  check_scan_inputs(x, p, h_init);
  const std::size_t L = x.rows();
  const std::size_t C = p.channels();
  const std::size_t N = p.state_dim();
  const std::size_t padded = next_pow2(L);
  const Matrix<double> h0 = h_init.empty() ? Matrix<double>() : to_double(h_init);

  const ProjectionTable tab = project_all(x, p);
  Matrix<double> y_acc(L, C);
  Matrix<double> h_final(C, N);

  // Channels run concurrently when there are enough of them; otherwise the
  // tree levels inside exclusive_scan split across workers.
  const bool channel_parallel = C >= num_threads();
  auto scan_channel = [&](std::size_t c) {
    std::vector<AffineStep> original(L);
    std::vector<AffineStep> prefix(padded);
    for (std::size_t n = 0; n < N; ++n) {
      const double a = p.a_diag(c, n);
      for (std::size_t t = 0; t < L; ++t) {
        const double delta = tab.delta(t, c);
        const double u = delta * a;
        original[t] = {std::exp(u), zoh_factor(u) * delta * tab.b(t, n) * double(x(t, c))};
      }
      std::copy(original.begin(), original.end(), prefix.begin());
      std::fill(prefix.begin() + L, prefix.end(), AffineStep{});
      exclusive_scan(prefix);
      const double start = initial_state(h0, c, n);
      double h = start;
      for (std::size_t t = 0; t < L; ++t) {
        const AffineStep inclusive = compose(prefix[t], original[t]);
        h = inclusive.a * start + inclusive.b;
        y_acc(t, c) += tab.c(t, n) * h;
      }
      h_final(c, n) = h;
    }
    for (std::size_t t = 0; t < L; ++t) y_acc(t, c) += double(p.d_skip[c]) * double(x(t, c));
  };

  if (channel_parallel) {
    parallel_for(C, [&](std::size_t b, std::size_t e) {
      for (std::size_t c = b; c < e; ++c) scan_channel(c);
    });
  } else {
    for (std::size_t c = 0; c < C; ++c) scan_channel(c);
  }

  for (std::size_t t = 0; t < L; ++t) {
    if (!all_finite(std::span<const double>(y_acc.row(t)))) throw NumericError("scan_parallel: non-finite output", t);
  }
  return {from_double<T>(y_acc), from_double<T>(h_final)};
}

template ScanResult<float> scan_parallel(const Matrix<float>&, const SelectiveParams<float>&,
                                         const Matrix<float>&);
template ScanResult<double> scan_parallel(const Matrix<double>&, const SelectiveParams<double>&,
                                          const Matrix<double>&);

std::vector<double> lti_kernel(std::span<const double> a_bar, std::span<const double> b_bar,
                               std::span<const double> c, std::size_t length) {
  if (a_bar.size() != b_bar.size() || a_bar.size() != c.size()) {
    throw ShapeError("lti_kernel: a_bar, b_bar and c must have equal length");
  }
  if (length == 0) throw ShapeError("lti_kernel: length must be >= 1");
  require_finite(a_bar, "lti_kernel a_bar");
  require_finite(b_bar, "lti_kernel b_bar");
  require_finite(c, "lti_kernel c");
  std::vector<double> kernel(length, 0.0);
  std::vector<double> power(b_bar.begin(), b_bar.end());  // A_bar^t B_bar
  for (std::size_t t = 0; t < length; ++t) {
    double k = 0.0;
    for (std::size_t n = 0; n < power.size(); ++n) {
      k += c[n] * power[n];
      power[n] *= a_bar[n];
    }
    kernel[t] = k;
  }
  return kernel;
}

namespace {
// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};
}  // namespace

std::vector<double> fft_causal_convolve(std::span<const double> x,
                                        std::span<const double> kernel) {
  if (x.empty()) return {};
  const std::size_t L = x.size();
  const std::size_t n = next_pow2(L + std::min(kernel.size(), L) - 1);
  const std::size_t bins = n / 2 + 1;

  std::unique_ptr<double, FftwDeleter> rx(fftw_alloc_real(n));
  std::unique_ptr<double, FftwDeleter> rk(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwDeleter> fx(fftw_alloc_complex(bins));
  std::unique_ptr<fftw_complex, FftwDeleter> fk(fftw_alloc_complex(bins));
  fftw_plan px, pk, pinv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    px = fftw_plan_dft_r2c_1d(static_cast<int>(n), rx.get(), fx.get(), FFTW_ESTIMATE);
    pk = fftw_plan_dft_r2c_1d(static_cast<int>(n), rk.get(), fk.get(), FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_1d(static_cast<int>(n), fx.get(), rx.get(), FFTW_ESTIMATE);
  }
  std::fill(rx.get(), rx.get() + n, 0.0);
  std::fill(rk.get(), rk.get() + n, 0.0);
  std::copy(x.begin(), x.end(), rx.get());
  std::copy(kernel.begin(), kernel.begin() + std::min(kernel.size(), L), rk.get());
  fftw_execute(px);
  fftw_execute(pk);
  for (std::size_t i = 0; i < bins; ++i) {
    const double re = fx.get()[i][0] * fk.get()[i][0] - fx.get()[i][1] * fk.get()[i][1];
    const double im = fx.get()[i][0] * fk.get()[i][1] + fx.get()[i][1] * fk.get()[i][0];
    fx.get()[i][0] = re;
    fx.get()[i][1] = im;
  }
  fftw_execute(pinv);
  std::vector<double> y(L);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < L; ++t) y[t] = rx.get()[t] * scale;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(px);
    fftw_destroy_plan(pk);
    fftw_destroy_plan(pinv);
  }
  return y;
}

template <typename T>
bool is_time_invariant(const SelectiveParams<T>& p) {
  auto zero = [](const Matrix<T>& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](T v) { return v == T(0); });
  };
  return zero(p.w_delta) && zero(p.w_b) && zero(p.w_c);
}

template bool is_time_invariant(const SelectiveParams<float>&);
template bool is_time_invariant(const SelectiveParams<double>&);

template <typename T>
Matrix<T> scan_lti_kernel(const Matrix<T>& x, const SelectiveParams<T>& p) {
  check_scan_inputs(x, p, Matrix<T>{});
  if (!is_time_invariant(p)) {
    throw ConfigError("scan_lti_kernel: params are input-dependent (selective)");
  }
  const std::size_t L = x.rows();
  const std::size_t C = p.channels();
  const std::size_t N = p.state_dim();
  const std::vector<T> zeros(C, T(0));
  const Projection pr = project_selective<T>(zeros, p);

  Matrix<double> y(L, C);
  parallel_for(C, [&](std::size_t begin, std::size_t end) {
    std::vector<double> a_bar(N), b_bar(N), xc(L);
    for (std::size_t c = begin; c < end; ++c) {
      for (std::size_t n = 0; n < N; ++n) {
        const Discretized d = discretize(pr.delta[c], double(p.a_diag(c, n)), pr.b[n]);
        a_bar[n] = d.a_bar;
        b_bar[n] = d.b_bar;
      }
      for (std::size_t t = 0; t < L; ++t) xc[t] = x(t, c);
      const std::vector<double> kernel = lti_kernel(a_bar, b_bar, pr.c, L);
      const std::vector<double> conv = fft_causal_convolve(xc, kernel);
      for (std::size_t t = 0; t < L; ++t) y(t, c) = conv[t] + double(p.d_skip[c]) * xc[t];
    }
  });
  return from_double<T>(y);
}

template Matrix<float> scan_lti_kernel(const Matrix<float>&, const SelectiveParams<float>&);
template Matrix<double> scan_lti_kernel(const Matrix<double>&, const SelectiveParams<double>&);

ScanGradients scan_backward(const Matrix<double>& x, const SelectiveParams<double>& p,
                            const Matrix<double>& h_init, const Matrix<double>& grad_y) {
  check_scan_inputs(x, p, h_init);
  const std::size_t L = x.rows();
  const std::size_t C = p.channels();
  const std::size_t N = p.state_dim();
  check_shape(grad_y, L, C, "scan_backward grad_y");
  require_finite(std::span<const double>(grad_y.data()), "grad_y");

  // Forward recomputation, keeping every state h_t (t = -1 .. L-1).
  const ProjectionTable tab = project_all(x, p);
  std::vector<Matrix<double>> states(L + 1, Matrix<double>(C, N));
  if (!h_init.empty()) states[0] = h_init;
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double delta = tab.delta(t, c);
      for (std::size_t n = 0; n < N; ++n) {
        const double u = delta * p.a_diag(c, n);
        states[t + 1](c, n) =
            std::exp(u) * states[t](c, n) + zoh_factor(u) * delta * tab.b(t, n) * x(t, c);
      }
    }
  }

  ScanGradients g{Matrix<double>(L, C),          Matrix<double>(C, N),
                  Matrix<double>(C, C),          std::vector<double>(C, 0.0),
                  Matrix<double>(N, C),          std::vector<double>(N, 0.0),
                  Matrix<double>(N, C),          std::vector<double>(N, 0.0),
                  std::vector<double>(C, 0.0),   Matrix<double>(C, N)};

  Matrix<double> gh(C, N);  // dLoss/dh_t, carried backwards
  std::vector<double> g_delta(C), g_b(N), g_c(N), g_z(C);
  for (std::size_t t = L; t-- > 0;) {
    const auto x_t = x.row(t);
    const auto gy = grad_y.row(t);
    const Matrix<double>& h_prev = states[t];
    const Matrix<double>& h_cur = states[t + 1];
    std::fill(g_delta.begin(), g_delta.end(), 0.0);
    std::fill(g_b.begin(), g_b.end(), 0.0);
    std::fill(g_c.begin(), g_c.end(), 0.0);

    for (std::size_t c = 0; c < C; ++c) {
      const double delta = tab.delta(t, c);
      g.d_skip[c] += gy[c] * x_t[c];
      g.x(t, c) += gy[c] * p.d_skip[c];
      for (std::size_t n = 0; n < N; ++n) {
        const double a = p.a_diag(c, n);
        const double u = delta * a;
        const double a_bar = std::exp(u);
        const double phi = zoh_factor(u);
        const double dphi = zoh_factor_derivative(u);
        const double bn = tab.b(t, n);
        const double b_bar = phi * delta * bn;

        g_c[n] += gy[c] * h_cur(c, n);
        const double ght = gh(c, n) + gy[c] * tab.c(t, n);

        const double g_abar = ght * h_prev(c, n);
        const double g_bbar = ght * x_t[c];
        g.x(t, c) += ght * b_bar;
        gh(c, n) = ght * a_bar;  // becomes dLoss/dh_{t-1}

        g_delta[c] += g_abar * a * a_bar + g_bbar * bn * (phi + u * dphi);
        g.a_diag(c, n) += g_abar * delta * a_bar + g_bbar * dphi * delta * delta * bn;
        g_b[n] += g_bbar * phi * delta;
      }
    }

    // Projection adjoints.
    for (std::size_t c = 0; c < C; ++c) {
      double z = p.b_delta[c];
      for (std::size_t j = 0; j < C; ++j) z += p.w_delta(c, j) * x_t[j];
      g_z[c] = g_delta[c] * sigmoid(z);
      g.b_delta[c] += g_z[c];
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < C; ++j) {
        g.w_delta(c, j) += g_z[c] * x_t[j];
        g.x(t, j) += p.w_delta(c, j) * g_z[c];
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      g.b_bias[n] += g_b[n];
      g.c_bias[n] += g_c[n];
      for (std::size_t j = 0; j < C; ++j) {
        g.w_b(n, j) += g_b[n] * x_t[j];
        g.w_c(n, j) += g_c[n] * x_t[j];
        g.x(t, j) += p.w_b(n, j) * g_b[n] + p.w_c(n, j) * g_c[n];
      }
    }
  }
  g.h_init = gh;
  return g;
}

}  // namespace scanstereo::ssm
