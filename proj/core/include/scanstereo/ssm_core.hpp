// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// One-dimensional selective state-space scan.
//
// For a sequence x_t in R^C and per-channel diagonal state h_t[c] in R^N:
//
//   delta_t = softplus(W_delta x_t + b_delta)            in R^C
//   B_t     = W_B x_t + b_B,   C_t = W_C x_t + b_C       in R^N
//   a_bar   = exp(delta_t[c] * A[c, n])
//   b_bar   = (delta A)^-1 (exp(delta A) - 1) delta B_t[n]   (exact ZOH)
//   h_t     = a_bar * h_{t-1} + b_bar * x_t[c]
//   y_t[c]  = sum_n C_t[n] h_t[c, n] + D[c] x_t[c]
//
// All arithmetic accumulates in double; T only selects storage precision.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scanstereo/tensor.hpp"

namespace scanstereo {
class TensorArchive;
}

namespace scanstereo::ssm {

inline constexpr std::size_t kDefaultStateDim = 4;
inline constexpr double kDefaultSsmRatio = 1.0;
/// Below this |delta * a| the ZOH input factor switches to its Taylor series.
inline constexpr double kSeriesThreshold = 1e-4;

template <typename T>
struct SelectiveParams {
  Matrix<T> a_diag;        // C x N, strictly negative
  Matrix<T> w_delta;       // C x C
  std::vector<T> b_delta;  // C
  Matrix<T> w_b;           // N x C
  std::vector<T> b_bias;   // N
  Matrix<T> w_c;           // N x C
  std::vector<T> c_bias;   // N
  std::vector<T> d_skip;   // C

  std::size_t channels() const { return a_diag.rows(); }
  std::size_t state_dim() const { return a_diag.cols(); }

  /// Throws ShapeError on inconsistent shapes, NumericError on non-finite
  /// entries and ConfigError when an a_diag entry is not strictly negative.
  void validate() const;

  template <typename U>
  SelectiveParams<U> cast() const;
};

/// Zero-filled parameters of the given shape (a_diag still -(n+1)).
SelectiveParams<double> zero_params(std::size_t channels, std::size_t state_dim);

/// Seeded default initialization: a_diag[c, n] = -(n + 1); b_delta chosen so
/// softplus(b_delta) is log-uniform in [1e-3, 1e-1]; projections uniform in
/// +-1/sqrt(C) (W_delta scaled by 0.1); d_skip zero.
SelectiveParams<double> make_selective_params(std::size_t channels,
                                              std::size_t state_dim,
                                              std::uint64_t seed);

/// Stores params under `<prefix>a_diag`, `<prefix>w_delta`, ... The
/// standalone prefix is "ssm.".
void save_params(TensorArchive& archive, const std::string& prefix,
                 const SelectiveParams<double>& p);
SelectiveParams<double> load_params(const TensorArchive& archive,
                                    const std::string& prefix);

double softplus(double z);
double sigmoid(double z);

struct Projection {
  std::vector<double> delta;  // C, strictly positive
  std::vector<double> b;      // N
  std::vector<double> c;      // N
};

template <typename T>
Projection project_selective(std::span<const T> x_t, const SelectiveParams<T>& p);

struct Discretized {
  double a_bar;
  double b_bar;
};

/// (e^u - 1) / u, with the series 1 + u/2 + u^2/6 for |u| < kSeriesThreshold.
double zoh_factor(double u);
/// d/du of zoh_factor, consistent with its branch structure.
double zoh_factor_derivative(double u);

/// Exact zero-order hold for one (channel, state) pair. Throws NumericError
/// on non-finite inputs and ConfigError when delta <= 0.
Discretized discretize(double delta, double a, double b);

template <typename T>
struct ScanResult {
  Matrix<T> y;        // L x C
  Matrix<T> h_final;  // C x N
};

/// Reference recurrence. An empty h_init means zero initial state.
template <typename T>
ScanResult<T> scan_sequential(const Matrix<T>& x, const SelectiveParams<T>& p,
                              const Matrix<T>& h_init = {});

/// First-order affine map h -> a * h + b.
struct AffineStep {
  double a = 1.0;
  double b = 0.0;
};

/// Apply `first`, then `second`: (a, b) o (a', b') = (a a', a' b + b').
inline AffineStep compose(AffineStep first, AffineStep second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

/// In-place exclusive Blelloch scan over `steps` (size must be a power of
/// two). Afterwards steps[t] is the composition of the original steps
/// [0, t). Level loops are split across workers when large.
void exclusive_scan(std::span<AffineStep> steps);

/// Same contract as scan_sequential, evaluated with a work-efficient
/// up-sweep/down-sweep tree over the affine steps of each (c, n) lane.
template <typename T>
ScanResult<T> scan_parallel(const Matrix<T>& x, const SelectiveParams<T>& p,
                            const Matrix<T>& h_init = {});

/// Structured convolution kernel (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar)
/// for one channel with time-invariant constants.
std::vector<double> lti_kernel(std::span<const double> a_bar,
                               std::span<const double> b_bar,
                               std::span<const double> c, std::size_t length);

/// Causal linear convolution y[t] = sum_{s<=t} kernel[s] x[t-s], via FFT.
std::vector<double> fft_causal_convolve(std::span<const double> x,
                                        std::span<const double> kernel);

/// True when W_delta, W_B and W_C are identically zero, i.e. delta, B and C
/// do not depend on the input.
template <typename T>
bool is_time_invariant(const SelectiveParams<T>& p);

/// Global-convolution route for time-invariant params (zero initial state).
/// Throws ConfigError when the params are selective.
template <typename T>
Matrix<T> scan_lti_kernel(const Matrix<T>& x, const SelectiveParams<T>& p);

struct ScanGradients {
  Matrix<double> x;        // L x C
  Matrix<double> a_diag;   // C x N
  Matrix<double> w_delta;  // C x C
  std::vector<double> b_delta;
  Matrix<double> w_b;
  std::vector<double> b_bias;
  Matrix<double> w_c;
  std::vector<double> c_bias;
  std::vector<double> d_skip;
  Matrix<double> h_init;   // C x N
};

/// Reverse-mode adjoint of scan_sequential for the scalar sum(grad_y * y).
ScanGradients scan_backward(const Matrix<double>& x,
                            const SelectiveParams<double>& p,
                            const Matrix<double>& h_init,
                            const Matrix<double>& grad_y);

}  // namespace scanstereo::ssm
