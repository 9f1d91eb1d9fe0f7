// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Iterative disparity refinement at quarter resolution.
//
// Each learned step:
//   corr   = lookup(pyramid, d, r)                         4 (2r + 1) channels
//   m      = ReLU(conv3x3(ReLU(conv1x1(corr ++ d))))       motion features
//   x      = input_proj (m ++ hidden)
//   hidden = hidden + hidden_head . convss2d(x)
//   d      = clamp(d + delta_head . hidden, 0, W/4 - 1)
//
// The hidden state is initialized from the left features alone
// (tanh(state_init . f_l)); there is no separate context network.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scanstereo/config.hpp"
#include "scanstereo/cost_volume.hpp"
#include "scanstereo/features.hpp"
#include "scanstereo/scan2d.hpp"
#include "scanstereo/tensor.hpp"

namespace scanstereo {
class TensorArchive;
}

namespace scanstereo::refine {

struct UpdateDims {
  std::size_t feature_channels = 25;
  std::size_t radius = Defaults::kLookupRadius;
  std::size_t hidden = Defaults::kHiddenChannels;
  std::size_t motion = Defaults::kMotionChannels;
  std::size_t state_dim = Defaults::kStateDim;

  std::size_t corr_channels() const { return cost::kPyramidLevels * (2 * radius + 1); }
};

struct UpdateWeights {
  UpdateDims dims;
  Matrix<double> state_init;  // hidden x feature_channels
  std::vector<double> state_init_bias;
  Matrix<double> motion1;     // motion x (corr_channels + 1), 1x1 conv
  std::vector<double> motion1_bias;
  std::vector<double> motion2;  // [motion][motion][3][3]
  std::vector<double> motion2_bias;
  Matrix<double> input_proj;  // hidden x (motion + hidden)
  std::vector<double> input_proj_bias;
  scan2d::ConvSS2DWeights convss2d;  // hidden channels
  Matrix<double> hidden_head;  // hidden x hidden
  std::vector<double> hidden_head_bias;
  std::vector<double> delta_head;  // 1 x hidden
  double delta_head_bias = 0.0;

  void validate() const;
};

UpdateWeights make_update_weights(const UpdateDims& dims, std::uint64_t seed);

/// Every tensor is stored under "refine.": refine.state_init, refine.motion1,
/// refine.motion2, refine.input_proj, refine.ss2d.*, refine.hidden_head,
/// refine.delta_head (each with a ".bias" companion).
void save_update_weights(TensorArchive& archive, const UpdateWeights& w);
UpdateWeights load_update_weights(const TensorArchive& archive);

/// Stage names of the update pipeline, in execution order.
std::vector<std::string> pipeline_components();

struct RefineState {
  cost::DisparityMap d;  // quarter resolution
  FeatureMap2D hidden;   // H/4 x W/4 x hidden
};

/// `mono` (quarter resolution) seeds d after clamping to [0, W/4 - 1]; a null
/// pointer starts from zero disparity.
RefineState init_state(const FeatureMap2D& feat_l, const cost::DisparityMap* mono,
                       const UpdateWeights& w);

struct StepOptions {
  std::size_t radius = Defaults::kLookupRadius;
  scan2d::ConvSS2DOptions convss2d;
  Precision precision = Precision::kFloat32;
  std::size_t iteration = 0;  // reported in NumericError
};

RefineState update_step(const RefineState& state, const cost::CorrPyramid& pyramid,
                        const UpdateWeights& w, const StepOptions& options = {});

/// Learning-free update: increment = wta - d, which lands on the WTA
/// solution in one step.
RefineState oracle_update_step(const RefineState& state, const cost::DisparityMap& wta);

/// Bilinear x`factor` upsampling (pixel-centre aligned, clamped at the edges),
/// values multiplied by `factor`.
Matrix<double> upsample_disparity(const Matrix<double>& quarter,
                                  std::size_t factor = features::kDownsample);
/// Area mean over factor x factor blocks, values divided by `factor`.
Matrix<double> downsample_disparity(const Matrix<double>& full,
                                    std::size_t factor = features::kDownsample);

enum class UpdateMode { kLearned, kOracle };

struct RefineConfig {
  features::ExtractorConfig extractor;
  std::size_t iterations = Defaults::kInferenceIterations;
  std::size_t radius = Defaults::kLookupRadius;
  UpdateMode mode = UpdateMode::kLearned;
  /// L2-normalize features before correlation.
  bool normalize_features = true;
  bool keep_snapshots = false;
  scan2d::ScanMode scan_mode = scan2d::ScanMode::kLineReset;
  Precision precision = Precision::kFloat32;
};

struct RefineResult {
  Matrix<double> disparity;  // full resolution
  Matrix<double> quarter;    // final quarter-resolution estimate
  /// Full-resolution estimate after each iteration; entry 0 is the
  /// initialization. Empty unless keep_snapshots.
  std::vector<Matrix<double>> snapshots;
};

/// Full pipeline on a rectified pair. `weights` may be null in oracle mode;
/// `mono_full` is an optional full-resolution initial disparity.
RefineResult run_refinement(const Image& left, const Image& right, const UpdateWeights* weights,
                            const RefineConfig& cfg, const Matrix<double>* mono_full = nullptr,
                            const features::LearnedWeights* feature_weights = nullptr);

/// sum_t gamma^(T - t) * mean_mask |d_t - gt| over t = 1..T, where
/// snapshots[0] is the initialization and is not penalized.
double sequence_loss(const std::vector<Matrix<double>>& snapshots, const Matrix<double>& gt,
                     const Matrix<std::uint8_t>& valid,
                     double gamma = Defaults::kSequenceLossGamma);

}  // namespace scanstereo::refine
