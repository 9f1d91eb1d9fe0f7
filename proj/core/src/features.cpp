// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/features.hpp"

#include <algorithm>
#include <cmath>

#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/tensor_io.hpp"

namespace scanstereo::features {
namespace {

// Stride-2, padding-1, 3x3 convolution followed by ReLU.
FeatureMap2D conv_stride2_relu(const FeatureMap2D& in, const std::vector<double>& weight,
                               const std::vector<double>& bias, std::size_t out_channels) {
  const std::size_t H = in.dim0(), W = in.dim1(), Cin = in.dim2();
  const std::size_t Ho = H / 2, Wo = W / 2;
  FeatureMap2D out(Ho, Wo, out_channels);
  parallel_for(Ho, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        auto dst = out.fiber(i, j);
        for (std::size_t o = 0; o < out_channels; ++o) {
          double acc = bias[o];
          for (std::size_t di = 0; di < 3; ++di) {
            const auto ii = static_cast<std::ptrdiff_t>(2 * i + di) - 1;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dj = 0; dj < 3; ++dj) {
              const auto jj = static_cast<std::ptrdiff_t>(2 * j + dj) - 1;
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              const auto src =
                  in.fiber(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              for (std::size_t c = 0; c < Cin; ++c) {
                acc += weight[((o * Cin + c) * 3 + di) * 3 + dj] * src[c];
              }
            }
          }
          dst[o] = std::max(acc, 0.0);
        }
      }
    }
  });
  return out;
}

}  // namespace

void ExtractorConfig::validate() const {
  if (mode == Mode::kPatch && patch_window % 2 == 0) {
    throw ConfigError("patch_window must be odd");
  }
  if (patch_window == 0) throw ConfigError("patch_window must be positive");
  if (mode == Mode::kLearned && channels == 0) throw ConfigError("channels must be >= 1");
}

std::size_t ExtractorConfig::output_channels() const {
  return mode == Mode::kPatch ? patch_window * patch_window : channels;
}

LearnedWeights make_learned_weights(std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  LearnedWeights w;
  w.channels = channels;
  // He-uniform bounds for fan-in 27 and 9C.
  const double b1 = std::sqrt(6.0 / 27.0);
  const double b2 = std::sqrt(6.0 / (9.0 * static_cast<double>(channels)));
  w.conv1.resize(channels * 3 * 9);
  for (auto& v : w.conv1) v = rng.uniform(-b1, b1);
  w.conv1_bias.assign(channels, 0.0);
  w.conv2.resize(channels * channels * 9);
  for (auto& v : w.conv2) v = rng.uniform(-b2, b2);
  w.conv2_bias.assign(channels, 0.0);
  return w;
}

void save_learned_weights(TensorArchive& archive, const LearnedWeights& w) {
  const auto c = static_cast<std::uint32_t>(w.channels);
  archive.add_narrowed("feat.conv1", {c, 3, 3, 3}, w.conv1);
  archive.add_narrowed("feat.conv1.bias", {c}, w.conv1_bias);
  archive.add_narrowed("feat.conv2", {c, c, 3, 3}, w.conv2);
  archive.add_narrowed("feat.conv2.bias", {c}, w.conv2_bias);
}

LearnedWeights load_learned_weights(const TensorArchive& archive) {
  const NamedTensor& t = archive.get("feat.conv1");
  if (t.dims.size() != 4) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch, "feat.conv1 must be rank 4");
  }
  const std::uint32_t c = t.dims[0];
  LearnedWeights w;
  w.channels = c;
  w.conv1 = archive.get_doubles("feat.conv1", {c, 3, 3, 3});
  w.conv1_bias = archive.get_doubles("feat.conv1.bias", {c});
  w.conv2 = archive.get_doubles("feat.conv2", {c, c, 3, 3});
  w.conv2_bias = archive.get_doubles("feat.conv2.bias", {c});
  return w;
}

Matrix<double> to_grayscale(const Image& image) {
  if (image.dim2() != 3) throw ShapeError("to_grayscale: expected 3 channels");
  Matrix<double> gray(image.dim0(), image.dim1());
  for (std::size_t i = 0; i < image.dim0(); ++i) {
    for (std::size_t j = 0; j < image.dim1(); ++j) {
      const auto px = image.fiber(i, j);
      gray(i, j) = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
  }
  return gray;
}

Matrix<double> area_downsample(const Matrix<double>& gray, std::size_t factor) {
  if (factor == 0 || gray.rows() % factor != 0 || gray.cols() % factor != 0) {
    throw ShapeError("area_downsample: dimensions must be divisible by the factor");
  }
  Matrix<double> out(gray.rows() / factor, gray.cols() / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < factor; ++a) {
        for (std::size_t b = 0; b < factor; ++b) acc += gray(i * factor + a, j * factor + b);
      }
      out(i, j) = acc * inv;
    }
  }
  return out;
}

FeatureMap2D extract(const Image& image, const ExtractorConfig& cfg,
                     const LearnedWeights* weights) {
  cfg.validate();
  const std::size_t H = image.dim0(), W = image.dim1();
  if (H == 0 || W == 0 || H % kDownsample != 0 || W % kDownsample != 0) {
    throw ShapeError("extract: image dimensions must be positive multiples of 4");
  }
  if (image.dim2() != 3) throw ShapeError("extract: expected an RGB image");

  if (cfg.mode == Mode::kLearned) {
    LearnedWeights generated;
    if (weights == nullptr) {
      generated = make_learned_weights(cfg.channels, cfg.seed);
      weights = &generated;
    }
    const std::size_t C = weights->channels;
    if (weights->conv1.size() != C * 27 || weights->conv2.size() != C * C * 9 ||
        weights->conv1_bias.size() != C || weights->conv2_bias.size() != C) {
      throw ShapeError("extract: learned weights are inconsistent");
    }
    FeatureMap2D half = conv_stride2_relu(image, weights->conv1, weights->conv1_bias, C);
    return conv_stride2_relu(half, weights->conv2, weights->conv2_bias, C);
  }

  Matrix<double> small = area_downsample(to_grayscale(image), kDownsample);
  if (cfg.center) {
    double mean = 0.0;
    for (double v : small.data()) mean += v;
    mean /= static_cast<double>(small.size());
    for (double& v : small.data()) v -= mean;
  }
  const std::size_t h = small.rows(), w = small.cols();
  const std::size_t win = cfg.patch_window;
  const auto r = static_cast<std::ptrdiff_t>(win / 2);
  FeatureMap2D out(h, w, win * win);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      auto dst = out.fiber(i, j);
      for (std::size_t dy = 0; dy < win; ++dy) {
        const auto ii = static_cast<std::ptrdiff_t>(i + dy) - r;
        for (std::size_t dx = 0; dx < win; ++dx) {
          const auto jj = static_cast<std::ptrdiff_t>(j + dx) - r;
          const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<std::ptrdiff_t>(h) &&
                              jj < static_cast<std::ptrdiff_t>(w);
          dst[dy * win + dx] =
              inside ? small(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) : 0.0;
        }
      }
    }
  }
  return out;
}

FeatureMap2D normalize_features(const FeatureMap2D& f) {
  FeatureMap2D out = f;
  for (std::size_t i = 0; i < f.dim0(); ++i) {
    for (std::size_t j = 0; j < f.dim1(); ++j) {
      auto v = out.fiber(i, j);
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& x : v) x /= norm;
      }
    }
  }
  return out;
}

}  // namespace scanstereo::features
