// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/refine.hpp"

#include <algorithm>
#include <cmath>

#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/tensor_io.hpp"

namespace scanstereo::refine {
namespace {

const std::string kPrefix = "refine.";

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix<double> m(rows, cols);
  const double bound = scale / std::sqrt(static_cast<double>(cols));
  for (auto& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

void check_matrix(const Matrix<double>& m, std::size_t rows, std::size_t cols,
                  const std::vector<double>& bias, const char* what) {
  if (m.rows() != rows || m.cols() != cols || bias.size() != rows) {
    throw ShapeError(std::string("UpdateWeights: ") + what + " has inconsistent shape");
  }
}

// 1x1 convolution: out(i, j) = act(W in(i, j) + b).
template <typename Act>
FeatureMap2D pointwise(const FeatureMap2D& in, const Matrix<double>& w,
                       const std::vector<double>& b, Act act) {
  const std::size_t H = in.dim0(), W = in.dim1(), Cin = in.dim2(), Cout = w.rows();
  FeatureMap2D out(H, W, Cout);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const auto x = in.fiber(i, j);
        auto dst = out.fiber(i, j);
        for (std::size_t o = 0; o < Cout; ++o) {
          double acc = b[o];
          const auto wr = w.row(o);
          for (std::size_t c = 0; c < Cin; ++c) acc += wr[c] * x[c];
          dst[o] = act(acc);
        }
      }
    }
  });
  return out;
}

FeatureMap2D conv3x3_relu(const FeatureMap2D& in, const std::vector<double>& w,
                          const std::vector<double>& b, std::size_t out_channels) {
  const std::size_t H = in.dim0(), W = in.dim1(), Cin = in.dim2();
  FeatureMap2D out(H, W, out_channels);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        auto dst = out.fiber(i, j);
        for (std::size_t o = 0; o < out_channels; ++o) {
          double acc = b[o];
          for (std::size_t di = 0; di < 3; ++di) {
            const auto ii = static_cast<std::ptrdiff_t>(i + di) - 1;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dj = 0; dj < 3; ++dj) {
              const auto jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              const auto src =
                  in.fiber(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              for (std::size_t c = 0; c < Cin; ++c) {
                acc += w[((o * Cin + c) * 3 + di) * 3 + dj] * src[c];
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

FeatureMap2D concat_channels(const FeatureMap2D& a, const FeatureMap2D& b) {
  const std::size_t H = a.dim0(), W = a.dim1(), Ca = a.dim2(), Cb = b.dim2();
  FeatureMap2D out(H, W, Ca + Cb);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      auto dst = out.fiber(i, j);
      std::copy(a.fiber(i, j).begin(), a.fiber(i, j).end(), dst.begin());
      std::copy(b.fiber(i, j).begin(), b.fiber(i, j).end(), dst.begin() + Ca);
    }
  }
  return out;
}

double max_disparity(std::size_t width) {
  return width > 0 ? static_cast<double>(width - 1) : 0.0;
}

void round_storage(FeatureMap2D& f, Precision p) {
  if (p == Precision::kFloat64) return;
  for (double& v : f.data()) v = store(v, p);
}

void round_storage(Matrix<double>& m, Precision p) {
  if (p == Precision::kFloat64) return;
  for (double& v : m.data()) v = store(v, p);
}

}  // namespace

void UpdateWeights::validate() const {
  const std::size_t Ch = dims.hidden, Cm = dims.motion;
  check_matrix(state_init, Ch, dims.feature_channels, state_init_bias, "state_init");
  check_matrix(motion1, Cm, dims.corr_channels() + 1, motion1_bias, "motion1");
  if (motion2.size() != Cm * Cm * 9 || motion2_bias.size() != Cm) {
    throw ShapeError("UpdateWeights: motion2 has inconsistent shape");
  }
  check_matrix(input_proj, Ch, Cm + Ch, input_proj_bias, "input_proj");
  check_matrix(hidden_head, Ch, Ch, hidden_head_bias, "hidden_head");
  if (delta_head.size() != Ch) throw ShapeError("UpdateWeights: delta_head has wrong length");
  convss2d.validate();
  if (convss2d.channels() != Ch) throw ShapeError("UpdateWeights: convss2d channel mismatch");
}

UpdateWeights make_update_weights(const UpdateDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  UpdateWeights w;
  w.dims = dims;
  const std::size_t Ch = dims.hidden, Cm = dims.motion;
  w.state_init = random_matrix(rng, Ch, dims.feature_channels, 1.0);
  w.state_init_bias.assign(Ch, 0.0);
  w.motion1 = random_matrix(rng, Cm, dims.corr_channels() + 1, 1.0);
  w.motion1_bias.assign(Cm, 0.0);
  w.motion2.resize(Cm * Cm * 9);
  const double b2 = 1.0 / std::sqrt(9.0 * static_cast<double>(Cm));
  for (auto& v : w.motion2) v = rng.uniform(-b2, b2);
  w.motion2_bias.assign(Cm, 0.0);
  w.input_proj = random_matrix(rng, Ch, Cm + Ch, 1.0);
  w.input_proj_bias.assign(Ch, 0.0);
  w.convss2d = scan2d::make_convss2d_weights(Ch, dims.state_dim, rng.next_u64());
  w.hidden_head = random_matrix(rng, Ch, Ch, 0.1);
  w.hidden_head_bias.assign(Ch, 0.0);
  w.delta_head.resize(Ch);
  const double bd = 0.01 / std::sqrt(static_cast<double>(Ch));
  for (auto& v : w.delta_head) v = rng.uniform(-bd, bd);
  w.delta_head_bias = 0.0;
  return w;
}

void save_update_weights(TensorArchive& archive, const UpdateWeights& w) {
  w.validate();
  const auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  put_matrix(archive, kPrefix + "state_init", w.state_init);
  put_vector(archive, kPrefix + "state_init.bias", w.state_init_bias);
  put_matrix(archive, kPrefix + "motion1", w.motion1);
  put_vector(archive, kPrefix + "motion1.bias", w.motion1_bias);
  archive.add_narrowed(kPrefix + "motion2",
                       {u32(w.dims.motion), u32(w.dims.motion), 3, 3}, w.motion2);
  put_vector(archive, kPrefix + "motion2.bias", w.motion2_bias);
  put_matrix(archive, kPrefix + "input_proj", w.input_proj);
  put_vector(archive, kPrefix + "input_proj.bias", w.input_proj_bias);
  scan2d::save_weights(archive, kPrefix + "ss2d.", w.convss2d);
  put_matrix(archive, kPrefix + "hidden_head", w.hidden_head);
  put_vector(archive, kPrefix + "hidden_head.bias", w.hidden_head_bias);
  archive.add_narrowed(kPrefix + "delta_head", {1, u32(w.dims.hidden)}, w.delta_head);
  const double bias[1] = {w.delta_head_bias};
  put_vector(archive, kPrefix + "delta_head.bias", bias);
  const double radius[1] = {static_cast<double>(w.dims.radius)};
  put_vector(archive, kPrefix + "radius", radius);
}

UpdateWeights load_update_weights(const TensorArchive& archive) {
  UpdateWeights w;
  const NamedTensor& si = archive.get(kPrefix + "state_init");
  const NamedTensor& m1 = archive.get(kPrefix + "motion1");
  if (si.dims.size() != 2 || m1.dims.size() != 2) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch, "refine weights must be rank 2");
  }
  w.dims.hidden = si.dims[0];
  w.dims.feature_channels = si.dims[1];
  w.dims.motion = m1.dims[0];
  w.dims.radius = static_cast<std::size_t>(get_vector(archive, kPrefix + "radius", 1)[0]);
  const auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  const std::size_t Ch = w.dims.hidden, Cm = w.dims.motion;
  w.state_init = get_matrix(archive, kPrefix + "state_init", Ch, w.dims.feature_channels);
  w.state_init_bias = get_vector(archive, kPrefix + "state_init.bias", Ch);
  w.motion1 = get_matrix(archive, kPrefix + "motion1", Cm, w.dims.corr_channels() + 1);
  w.motion1_bias = get_vector(archive, kPrefix + "motion1.bias", Cm);
  w.motion2 = archive.get_doubles(kPrefix + "motion2", {u32(Cm), u32(Cm), 3, 3});
  w.motion2_bias = get_vector(archive, kPrefix + "motion2.bias", Cm);
  w.input_proj = get_matrix(archive, kPrefix + "input_proj", Ch, Cm + Ch);
  w.input_proj_bias = get_vector(archive, kPrefix + "input_proj.bias", Ch);
  w.convss2d = scan2d::load_weights(archive, kPrefix + "ss2d.");
  w.dims.state_dim = w.convss2d.directions[0].state_dim();
  w.hidden_head = get_matrix(archive, kPrefix + "hidden_head", Ch, Ch);
  w.hidden_head_bias = get_vector(archive, kPrefix + "hidden_head.bias", Ch);
  w.delta_head = archive.get_doubles(kPrefix + "delta_head", {1, u32(Ch)});
  w.delta_head_bias = get_vector(archive, kPrefix + "delta_head.bias", 1)[0];
  w.validate();
  return w;
}

std::vector<std::string> pipeline_components() {
  return {"feature_extractor", "correlation_pyramid", "state_init_projection",
          "correlation_lookup", "motion_encoder", "input_projection",
          "convss2d", "hidden_head", "delta_head"};
}

RefineState init_state(const FeatureMap2D& feat_l, const cost::DisparityMap* mono,
                       const UpdateWeights& w) {
  if (feat_l.dim2() != w.dims.feature_channels) {
    throw ShapeError("init_state: feature channels " + std::to_string(feat_l.dim2()) +
                     " != " + std::to_string(w.dims.feature_channels));
  }
  const std::size_t H = feat_l.dim0(), W = feat_l.dim1();
  RefineState s;
  s.hidden = pointwise(feat_l, w.state_init, w.state_init_bias,
                       [](double v) { return std::tanh(v); });
  s.d = cost::DisparityMap(H, W, 0.0);
  if (mono != nullptr) {
    if (mono->height() != H || mono->width() != W) {
      throw ShapeError("init_state: monocular disparity does not match feature resolution");
    }
    const double hi = max_disparity(W);
    for (std::size_t k = 0; k < s.d.d.size(); ++k) {
      s.d.d.data()[k] = std::clamp(mono->d.data()[k], 0.0, hi);
    }
  }
  return s;
}

RefineState update_step(const RefineState& state, const cost::CorrPyramid& pyramid,
                        const UpdateWeights& w, const StepOptions& options) {
  if (options.radius != w.dims.radius) {
    throw ShapeError("update_step: lookup radius differs from the weights' radius");
  }
  const std::size_t H = state.d.height(), W = state.d.width();
  if (state.hidden.dim0() != H || state.hidden.dim1() != W ||
      state.hidden.dim2() != w.dims.hidden) {
    throw ShapeError("update_step: hidden state does not match disparity / weights");
  }

  const FeatureMap2D corr = cost::lookup(pyramid, state.d, options.radius);
  FeatureMap2D corr_d(H, W, corr.dim2() + 1);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      auto dst = corr_d.fiber(i, j);
      std::copy(corr.fiber(i, j).begin(), corr.fiber(i, j).end(), dst.begin());
      dst[corr.dim2()] = state.d.d(i, j);
    }
  }
  const auto relu = [](double v) { return std::max(v, 0.0); };
  const FeatureMap2D m1 = pointwise(corr_d, w.motion1, w.motion1_bias, relu);
  const FeatureMap2D motion = conv3x3_relu(m1, w.motion2, w.motion2_bias, w.dims.motion);
  const FeatureMap2D x = pointwise(concat_channels(motion, state.hidden), w.input_proj,
                                   w.input_proj_bias, [](double v) { return v; });
  const FeatureMap2D s = scan2d::convss2d_forward(x, w.convss2d, options.convss2d);
  const FeatureMap2D update =
      pointwise(s, w.hidden_head, w.hidden_head_bias, [](double v) { return v; });

  RefineState next;
  next.hidden = state.hidden;
  for (std::size_t k = 0; k < next.hidden.size(); ++k) next.hidden.data()[k] += update.data()[k];
  round_storage(next.hidden, options.precision);

  next.d = state.d;
  const double hi = max_disparity(W);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const auto h = next.hidden.fiber(i, j);
      double delta = w.delta_head_bias;
      for (std::size_t c = 0; c < h.size(); ++c) delta += w.delta_head[c] * h[c];
      if (!std::isfinite(delta)) {
        throw NumericError("update_step: non-finite disparity increment at iteration",
                           options.iteration);
      }
      next.d.d(i, j) = std::clamp(state.d.d(i, j) + delta, 0.0, hi);
    }
  }
  round_storage(next.d.d, options.precision);
  return next;
}

RefineState oracle_update_step(const RefineState& state, const cost::DisparityMap& wta) {
  if (wta.height() != state.d.height() || wta.width() != state.d.width()) {
    throw ShapeError("oracle_update_step: WTA map does not match state");
  }
  RefineState next = state;
  const double hi = max_disparity(state.d.width());
  // Increment wta - d, applied as a direct assignment.
  for (std::size_t k = 0; k < next.d.d.size(); ++k) {
    next.d.d.data()[k] = std::clamp(wta.d.data()[k], 0.0, hi);
  }
  return next;
}

Matrix<double> upsample_disparity(const Matrix<double>& quarter, std::size_t factor) {
  const std::size_t h = quarter.rows(), w = quarter.cols();
  if (h == 0 || w == 0 || factor == 0) throw ShapeError("upsample_disparity: empty input");
  Matrix<double> out(h * factor, w * factor);
  const double f = static_cast<double>(factor);
  auto coord = [f](std::size_t x, std::size_t n, std::size_t& lo, std::size_t& hi, double& t) {
    const double s = std::clamp((static_cast<double>(x) + 0.5) / f - 0.5, 0.0,
                                static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, n - 1);
    t = s - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < out.rows(); ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, h, y0, y1, ty);
    for (std::size_t x = 0; x < out.cols(); ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, w, x0, x1, tx);
      const double top = (1.0 - tx) * quarter(y0, x0) + tx * quarter(y0, x1);
      const double bottom = (1.0 - tx) * quarter(y1, x0) + tx * quarter(y1, x1);
      out(y, x) = f * ((1.0 - ty) * top + ty * bottom);
    }
  }
  return out;
}

Matrix<double> downsample_disparity(const Matrix<double>& full, std::size_t factor) {
  if (factor == 0 || full.rows() % factor != 0 || full.cols() % factor != 0) {
    throw ShapeError("downsample_disparity: dimensions must be divisible by the factor");
  }
  Matrix<double> out(full.rows() / factor, full.cols() / factor);
  const double scale = 1.0 / static_cast<double>(factor * factor * factor);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < factor; ++a) {
        for (std::size_t b = 0; b < factor; ++b) acc += full(i * factor + a, j * factor + b);
      }
      out(i, j) = acc * scale;
    }
  }
  return out;
}

RefineResult run_refinement(const Image& left, const Image& right, const UpdateWeights* weights,
                            const RefineConfig& cfg, const Matrix<double>* mono_full,
                            const features::LearnedWeights* feature_weights) {
  if (!left.same_shape(right)) throw ShapeError("run_refinement: left/right shapes differ");
  if (cfg.mode == UpdateMode::kLearned && weights == nullptr) {
    throw ConfigError("run_refinement: learned mode requires update weights");
  }

  FeatureMap2D fl = features::extract(left, cfg.extractor, feature_weights);
  FeatureMap2D fr = features::extract(right, cfg.extractor, feature_weights);
  if (cfg.normalize_features) {
    fl = features::normalize_features(fl);
    fr = features::normalize_features(fr);
  }
  const cost::CorrelationVolume volume = cost::build_correlation(fl, fr);

  cost::DisparityMap mono;
  if (mono_full != nullptr) {
    if (mono_full->rows() != left.dim0() || mono_full->cols() != left.dim1()) {
      throw ShapeError("run_refinement: monocular initialization must match the image size");
    }
    mono = cost::DisparityMap(fl.dim0(), fl.dim1());
    mono.d = downsample_disparity(*mono_full);
  }
  const cost::DisparityMap* mono_ptr = mono_full != nullptr ? &mono : nullptr;

  RefineState state;
  if (cfg.mode == UpdateMode::kLearned) {
    state = init_state(fl, mono_ptr, *weights);
  } else {
    // The oracle path carries no hidden features.
    state.d = cost::DisparityMap(fl.dim0(), fl.dim1(), 0.0);
    if (mono_ptr != nullptr) {
      const double hi = max_disparity(fl.dim1());
      for (std::size_t k = 0; k < state.d.d.size(); ++k) {
        state.d.d.data()[k] = std::clamp(mono.d.data()[k], 0.0, hi);
      }
    }
  }

  RefineResult result;
  if (cfg.keep_snapshots) result.snapshots.push_back(upsample_disparity(state.d.d));

  if (cfg.iterations > 0) {
    if (cfg.mode == UpdateMode::kOracle) {
      const cost::DisparityMap wta = cost::wta_disparity(volume);
      for (std::size_t t = 0; t < cfg.iterations; ++t) {
        state = oracle_update_step(state, wta);
        if (cfg.keep_snapshots) result.snapshots.push_back(upsample_disparity(state.d.d));
      }
    } else {
      const cost::CorrPyramid pyramid = cost::build_pyramid(volume);
      StepOptions opts;
      opts.radius = cfg.radius;
      opts.convss2d.mode = cfg.scan_mode;
      opts.precision = cfg.precision;
      for (std::size_t t = 0; t < cfg.iterations; ++t) {
        opts.iteration = t;
        state = update_step(state, pyramid, *weights, opts);
        if (cfg.keep_snapshots) result.snapshots.push_back(upsample_disparity(state.d.d));
      }
    }
  }
  result.quarter = state.d.d;
  result.disparity = upsample_disparity(state.d.d);
  return result;
}

double sequence_loss(const std::vector<Matrix<double>>& snapshots, const Matrix<double>& gt,
                     const Matrix<std::uint8_t>& valid, double gamma) {
  if (snapshots.size() < 2) return 0.0;
  std::size_t count = 0;
  for (auto v : valid.data()) count += v != 0;
  if (count == 0) throw ConfigError("sequence_loss: empty mask");
  const std::size_t T = snapshots.size() - 1;
  double loss = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix<double>& d = snapshots[t];
    if (d.rows() != gt.rows() || d.cols() != gt.cols() || valid.rows() != gt.rows() ||
        valid.cols() != gt.cols()) {
      throw ShapeError("sequence_loss: snapshot / ground truth / mask shapes differ");
    }
    double l1 = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (valid.data()[k]) l1 += std::abs(d.data()[k] - gt.data()[k]);
    }
    loss += std::pow(gamma, static_cast<double>(T - t)) * l1 / static_cast<double>(count);
  }
  return loss;
}

}  // namespace scanstereo::refine
