// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Epipolar correlation volume, pooled pyramid and interpolated lookup.
//
// Disparity convention: d >= 0, a left pixel at column j matches the right
// image at column k = j - d.

#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <vector>

#include "scanstereo/tensor.hpp"

namespace scanstereo::cost {

inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr std::size_t kDefaultRadius = 4;

/// c(i, j, k) = sum_d f_l(i, j, d) * f_r(i, k, d), no normalization.
struct CorrelationVolume {
  Volume<double> c;  // H x W x W
  std::size_t feature_dim = 0;
};

/// Level l (0-based) has shape H x W x floor(W / 2^l).
struct CorrPyramid {
  std::vector<Volume<double>> levels;
  /// Set when a level could not be built because the previous one had
  /// fewer than two entries along the pooled axis.
  bool truncated = false;

  std::size_t level_width(std::size_t l) const { return levels[l].dim2(); }
};

struct DisparityMap {
  Matrix<double> d;
  Matrix<std::uint8_t> valid;

  DisparityMap() = default;
  DisparityMap(std::size_t h, std::size_t w, double fill = 0.0)
      : d(h, w, fill), valid(h, w, 1) {}
  std::size_t height() const { return d.rows(); }
  std::size_t width() const { return d.cols(); }
};

CorrelationVolume build_correlation(const FeatureMap2D& left, const FeatureMap2D& right);

CorrPyramid build_pyramid(const CorrelationVolume& volume,
                          std::size_t levels = kPyramidLevels);

/// Linear interpolation along the last axis of one level, with samples
/// outside [0, W_l - 1] contributing zero.
double sample_level(const Volume<double>& level, std::size_t i, std::size_t j, double pos);

/// Correlation features, H x W x (kPyramidLevels * (2r + 1)). Channel
/// l * (2r + 1) + (o + r) holds level l sampled at (j - d) / 2^l + o.
/// Missing (truncated) levels contribute zeros.
FeatureMap2D lookup(const CorrPyramid& pyramid, const DisparityMap& disparity,
                    std::size_t radius = kDefaultRadius);

/// Parabola vertex offset through (c_minus, c_center, c_plus); zero unless
/// the curvature is strictly negative.
double parabola_offset(double c_minus, double c_center, double c_plus);

/// Winner-take-all over k <= j with ties resolved toward larger k, then
/// parabolic sub-pixel refinement at interior peaks. Result is clamped at 0.
DisparityMap wta_disparity(const CorrelationVolume& volume);

}  // namespace scanstereo::cost
