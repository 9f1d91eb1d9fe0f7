// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Quarter-resolution feature extraction for desk-scale matching experiments.
//
// Patch mode: grayscale (0.299, 0.587, 0.114), 4x4 area mean, subtract the
// mean intensity of the downsampled image, then every output pixel is its
// flattened window x window neighbourhood (zero outside the image, i.e. at
// the mean level). Channel (dy * window + dx) holds offset (dy - r, dx - r).
//
// Learned mode: two stride-2 3x3 convolutions (padding 1) with ReLU, RGB in,
// `channels` out. Weights come from an archive or a seeded initializer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "scanstereo/tensor.hpp"

namespace scanstereo {
class TensorArchive;
}

namespace scanstereo::features {

inline constexpr std::size_t kDownsample = 4;

enum class Mode { kPatch, kLearned };

struct ExtractorConfig {
  Mode mode = Mode::kPatch;
  std::size_t patch_window = 5;
  std::size_t channels = 64;  // learned mode only; patch mode uses window^2
  std::uint64_t seed = 0;
  bool center = true;         // patch mode mean subtraction

  void validate() const;
  std::size_t output_channels() const;
};

/// conv weights laid out [out][in][3][3].
struct LearnedWeights {
  std::size_t channels = 0;
  std::vector<double> conv1;  // C x 3 x 3 x 3
  std::vector<double> conv1_bias;
  std::vector<double> conv2;  // C x C x 3 x 3
  std::vector<double> conv2_bias;
};

LearnedWeights make_learned_weights(std::size_t channels, std::uint64_t seed);
/// Names: feat.conv1, feat.conv1.bias, feat.conv2, feat.conv2.bias.
void save_learned_weights(TensorArchive& archive, const LearnedWeights& w);
LearnedWeights load_learned_weights(const TensorArchive& archive);

Matrix<double> to_grayscale(const Image& image);
Matrix<double> area_downsample(const Matrix<double>& gray, std::size_t factor);

/// Output is (H / 4) x (W / 4) x output_channels(). When `weights` is null in
/// learned mode they are generated from cfg.seed.
FeatureMap2D extract(const Image& image, const ExtractorConfig& cfg,
                     const LearnedWeights* weights = nullptr);

/// Scales every pixel's feature vector to unit L2 norm (zero vectors stay
/// zero), turning the correlation inner product into a cosine similarity.
FeatureMap2D normalize_features(const FeatureMap2D& f);

}  // namespace scanstereo::features
