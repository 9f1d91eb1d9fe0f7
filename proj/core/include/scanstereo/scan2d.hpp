// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Four-directional cross-scan over H x W x C feature maps and the ConvSS2D
// block built on it:
//
//   depthwise 3x3 conv (zero pad) -> SiLU -> cross_expand
//     -> per-direction selective scan -> cross_merge (sum)
//     -> LayerNorm over channels -> * SiLU(gate_proj . input) -> out_proj
//
// Sequence orders (L = H * W, pixel (i, j) has flat index i * W + j):
//   RowLR  row-major            position p -> pixel p
//   RowRL  RowLR reversed       position p -> pixel L - 1 - p
//   ColTB  column-major         position p -> pixel (p % H) * W + p / H
//   ColBT  ColTB reversed

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scanstereo/ssm_core.hpp"
#include "scanstereo/tensor.hpp"

namespace scanstereo {
class TensorArchive;
}

namespace scanstereo::scan2d {

enum class Direction : std::uint8_t { kRowLR = 0, kRowRL = 1, kColTB = 2, kColBT = 3 };
inline constexpr std::size_t kNumDirections = 4;
inline constexpr std::array<Direction, kNumDirections> kAllDirections = {
    Direction::kRowLR, Direction::kRowRL, Direction::kColTB, Direction::kColBT};

const char* direction_name(Direction d);

/// kLineReset restarts the state at every row (RowLR/RowRL) or column
/// (ColTB/ColBT); kFullSequence carries it across the whole flattened order.
enum class ScanMode { kLineReset, kFullSequence };

struct CrossScanBundle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<Matrix<double>, kNumDirections> seqs;               // L x C each
  std::array<std::vector<std::size_t>, kNumDirections> order;    // position -> pixel
  std::array<std::vector<std::size_t>, kNumDirections> inverse;  // pixel -> position

  /// Length of one independent line under kLineReset.
  std::size_t line_length(Direction d) const;
};

/// Position -> flat pixel index for one direction.
std::vector<std::size_t> scan_order(Direction d, std::size_t height, std::size_t width);

CrossScanBundle cross_expand(const FeatureMap2D& f);

/// Un-permutes the four direction outputs back to H x W x C and sums them.
FeatureMap2D cross_merge(const std::array<Matrix<double>, kNumDirections>& outputs,
                         const CrossScanBundle& bundle);

/// Runs the selective scan along one direction's sequence. Under kLineReset
/// the sequence is split into lines of `line_length` scanned independently
/// from zero state.
Matrix<double> scan_direction(const Matrix<double>& seq, std::size_t line_length,
                              const ssm::SelectiveParams<double>& params, ScanMode mode);

struct ConvSS2DWeights {
  Volume<double> dw_kernel;  // C x 3 x 3
  std::vector<double> dw_bias;
  Matrix<double> gate_proj;  // C x C
  std::vector<double> gate_bias;
  Matrix<double> out_proj;   // C x C
  std::vector<double> out_bias;
  std::array<ssm::SelectiveParams<double>, kNumDirections> directions;
  std::vector<double> norm_scale;
  std::vector<double> norm_shift;

  std::size_t channels() const { return dw_bias.size(); }
  void validate() const;
};

/// Seeded initialization. ssm_ratio is fixed at 1, so every direction scans
/// C channels with `state_dim` states each.
ConvSS2DWeights make_convss2d_weights(std::size_t channels, std::size_t state_dim,
                                      std::uint64_t seed);

/// Names: <prefix>dir{0..3}.<ssm field>, <prefix>dwconv, <prefix>dwconv.bias,
/// <prefix>gate, <prefix>gate.bias, <prefix>out, <prefix>out.bias,
/// <prefix>norm (2 x C: scale row then shift row). Standalone prefix "ss2d.".
void save_weights(TensorArchive& archive, const std::string& prefix,
                  const ConvSS2DWeights& w);
ConvSS2DWeights load_weights(const TensorArchive& archive, const std::string& prefix);

struct ConvSS2DOptions {
  ScanMode mode = ScanMode::kLineReset;
  double norm_eps = 1e-5;
};

double silu(double z);

FeatureMap2D depthwise_conv3x3(const FeatureMap2D& f, const Volume<double>& kernel,
                               const std::vector<double>& bias);

FeatureMap2D convss2d_forward(const FeatureMap2D& f, const ConvSS2DWeights& w,
                              const ConvSS2DOptions& options = {});

}  // namespace scanstereo::scan2d
