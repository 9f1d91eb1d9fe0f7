// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/config.hpp"

#include "json.hpp"

namespace scanstereo {

std::string describe_defaults_json() {
  nlohmann::ordered_json j;
  j["d_state"] = Defaults::kStateDim;
  j["ssm_ratio"] = Defaults::kSsmRatio;
  j["inference_iterations"] = Defaults::kInferenceIterations;
  j["training_iterations"] = Defaults::kTrainingIterations;
  j["scan_directions"] = Defaults::kScanDirections;
  j["pyramid_levels"] = Defaults::kPyramidLevels;
  j["lookup_radius"] = Defaults::kLookupRadius;
  j["patch_window"] = Defaults::kPatchWindow;
  j["hidden_channels"] = Defaults::kHiddenChannels;
  j["motion_channels"] = Defaults::kMotionChannels;
  j["sequence_loss_gamma"] = Defaults::kSequenceLossGamma;
  j["scan_mode"] = "line_reset";
  j["precision"] = "f32";
  return j.dump(2);
}

}  // namespace scanstereo
