// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Synthetic rectified stereo scenes made of fronto-parallel textured
// rectangles in front of a textured background plane.
//
// Every surface carries a texture fixed to the surface in left-image
// coordinates, so a surface point at left column x with disparity d appears
// at right column x - d. Textures are seeded Gaussian-smoothed white noise.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scanstereo/camera.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/tensor.hpp"

namespace scanstereo::synth {

/// Half-open pixel rectangle [x0, x1) x [y0, y1) in the left image.
struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(std::size_t x, std::size_t y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
};

struct Layer {
  double depth_m = 1.0;
  Rect bounds;
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  std::size_t width = 640;
  std::size_t height = 480;
  double background_depth_m = 10.0;
  std::uint64_t background_seed = 0;
  std::vector<Layer> layers;
  /// Std-dev in pixels of the Gaussian applied to the white noise.
  double texture_sigma = 0.7;

  void validate() const;
};

struct UnderwaterParams {
  std::array<double, 3> beta = {0.0, 0.0, 0.0};  // 1/m per RGB channel
  std::array<double, 3> veil = {0.0, 0.0, 0.0};  // backscatter colour in [0, 1]

  void validate() const;
};

struct RenderOptions {
  /// Round every layer depth so its disparity is a multiple of
  /// `disparity_quantum` pixels.
  bool integer_disparity = false;
  std::size_t disparity_quantum = 1;
};

struct StereoPair {
  Image left;
  Image right;
  Matrix<double> gt_disp;      // left view, pixels
  Matrix<double> depth_left;   // metres
  Matrix<double> depth_right;  // metres
  /// 1 where the left pixel is hidden in the right view or maps outside it.
  Matrix<std::uint8_t> occluded;
  std::vector<double> layer_depths;  // after integer snapping, background last
};

/// Depth such that the rig's disparity lands on the nearest positive multiple
/// of `quantum` pixels.
double snap_depth(double depth_m, const CameraRig& rig, std::size_t quantum);

/// Throws ConfigError when a disparity would exceed (W/4 - 1) * 4 pixels.
StereoPair render_stereo(const SceneSpec& spec, const CameraRig& rig, std::uint64_t seed,
                         const RenderOptions& options = {});

/// img' = img * exp(-beta z) + veil * (1 - exp(-beta z)) per channel.
Image apply_underwater(const Image& img, const Matrix<double>& depth,
                       const UnderwaterParams& p);

struct SamplerOptions {
  std::size_t width = 640;
  std::size_t height = 480;
  double focal_px = 400.0;
  /// Unset: drawn uniformly from kRigBaselines.
  std::optional<double> baseline_m;
  /// Probability of adding a foreground rectangle to the background plane.
  double two_plane_probability = 0.5;
  /// Disparity range of the background, pixels.
  double min_disparity = 8.0;
  double max_disparity = 64.0;
  /// Foreground rectangle side lengths and disparity step over the
  /// background, pixels.
  std::size_t min_size = 24;
  std::size_t max_size = 40;
  double min_jump = 8.0;
  double max_jump = 16.0;
  /// Rectangle corners snap to this grid.
  std::size_t grid = 4;
};

struct SampledScene {
  SceneSpec spec;
  CameraRig rig;
};

/// Draws a single- or two-plane scene and a rig from `rng`.
SampledScene sample_scene(Rng& rng, const SamplerOptions& options);

struct DatasetOptions {
  std::uint64_t seed = 0;
  SamplerOptions sampler;
  RenderOptions render;
  std::optional<UnderwaterParams> underwater;
  /// Draw per-scene underwater parameters when underwater is requested but
  /// `underwater` is unset.
  bool random_underwater = false;
};

/// Writes, per scene k, scene_kkkk_{left.ppm, right.ppm, disp.pfm, occ.pfm}
/// and then manifest.json. Returns the manifest text.
std::string dataset_emit(std::size_t n, const std::filesystem::path& out_dir,
                         const DatasetOptions& options);

}  // namespace scanstereo::synth
