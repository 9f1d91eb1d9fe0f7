// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#pragma once

#include <array>

namespace scanstereo {

/// Rectified stereo rig: disparity [px] = focal_px * baseline_m / depth [m].
struct CameraRig {
  double focal_px = 400.0;
  double baseline_m = 0.3;

  void validate() const;
  double disparity(double depth_m) const { return focal_px * baseline_m / depth_m; }
  double depth(double disparity_px) const { return focal_px * baseline_m / disparity_px; }
};

inline constexpr std::array<double, 4> kRigBaselines = {0.2, 0.3, 0.4, 0.5};

}  // namespace scanstereo
