// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#pragma once

#include <cstddef>
#include <string>

namespace scanstereo {

enum class Precision { kFloat32, kFloat64 };

/// Library-wide defaults in one place.
struct Defaults {
  static constexpr std::size_t kStateDim = 4;
  static constexpr double kSsmRatio = 1.0;
  static constexpr std::size_t kInferenceIterations = 32;
  static constexpr std::size_t kTrainingIterations = 22;
  static constexpr std::size_t kScanDirections = 4;
  static constexpr std::size_t kPyramidLevels = 4;
  static constexpr std::size_t kLookupRadius = 4;
  static constexpr std::size_t kPatchWindow = 5;
  static constexpr std::size_t kHiddenChannels = 32;
  static constexpr std::size_t kMotionChannels = 32;
  static constexpr double kSequenceLossGamma = 0.9;
};

/// JSON object echoing every entry of Defaults plus the scan mode and
/// precision defaults.
std::string describe_defaults_json();

/// Rounds through f32 when `p` is kFloat32; identity otherwise.
inline double store(double v, Precision p) {
  return p == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

}  // namespace scanstereo
