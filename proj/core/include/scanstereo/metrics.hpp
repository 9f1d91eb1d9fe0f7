// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Depth evaluation over a validity mask (pred d^, ground truth d):
//   absrel  = mean |d^ - d| / d
//   sqrel   = mean (d^ - d)^2 / d
//   rmse    = sqrt(mean (d^ - d)^2)
//   logrmse = sqrt(mean (ln d^ - ln d)^2)
//   delta_k = fraction with max(d^/d, d/d^) < 1.25^k

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scanstereo/camera.hpp"
#include "scanstereo/tensor.hpp"

namespace scanstereo::metrics {

inline constexpr double kMinDisparity = 1e-6;

class EmptyReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricReport {
  double absrel = 0.0;
  double sqrel = 0.0;
  double rmse = 0.0;
  double logrmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t valid_pixel_count = 0;
};

struct DepthMap {
  Matrix<double> z;
  Matrix<std::uint8_t> valid;
};

/// z = f B / d where d > kMinDisparity; other pixels are invalid (z = 0).
DepthMap disparity_to_depth(const Matrix<double>& disparity, const CameraRig& rig);
/// d = f B / z where z > 0; other pixels are invalid (d = 0).
DepthMap depth_to_disparity(const Matrix<double>& depth, const CameraRig& rig);

/// Throws EmptyReportError on an empty mask and ConfigError when a masked
/// depth is not positive.
MetricReport compute_metrics(const Matrix<double>& pred, const Matrix<double>& gt,
                             const Matrix<std::uint8_t>& mask);

/// Pixel-count weighted mean of per-image values (rmse and logrmse are
/// averaged as reported, not re-derived from pooled squared errors).
MetricReport aggregate(std::span<const MetricReport> reports);

/// Mean |pred - gt| over the mask.
double end_point_error(const Matrix<double>& pred, const Matrix<double>& gt,
                       const Matrix<std::uint8_t>& mask);
/// Fraction of masked pixels with |pred - gt| <= threshold.
double fraction_within(const Matrix<double>& pred, const Matrix<double>& gt,
                       const Matrix<std::uint8_t>& mask, double threshold);

struct NamedReport {
  std::string name;
  MetricReport report;
};

std::string to_json(const MetricReport& r);
/// {"images": [...], "aggregate": {...}}
std::string to_json(std::span<const NamedReport> rows, const MetricReport& total);
/// Aligned columns: Rel, SqRel, RMSE, Log RMSE, A1, A2, A3.
std::string format_table(std::span<const NamedReport> rows, const MetricReport& total);

}  // namespace scanstereo::metrics
