// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/scan2d.hpp"

#include <cmath>

#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/random.hpp"
#include "scanstereo/tensor_io.hpp"

namespace scanstereo::scan2d {
namespace {

void require_finite_map(const FeatureMap2D& f, const char* what) {
  const std::size_t C = f.dim2();
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!std::isfinite(f.data()[k])) {
      throw NumericError(std::string(what) + ": non-finite value at pixel", k / C);
    }
  }
}

bool is_row_direction(Direction d) {
  return d == Direction::kRowLR || d == Direction::kRowRL;
}

}  // namespace

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::kRowLR: return "RowLR";
    case Direction::kRowRL: return "RowRL";
    case Direction::kColTB: return "ColTB";
    case Direction::kColBT: return "ColBT";
  }
  return "?";
}

std::size_t CrossScanBundle::line_length(Direction d) const {
  return is_row_direction(d) ? width : height;
}

std::vector<std::size_t> scan_order(Direction d, std::size_t height, std::size_t width) {
  const std::size_t L = height * width;
  std::vector<std::size_t> order(L);
  for (std::size_t p = 0; p < L; ++p) {
    const std::size_t col_major = (p % height) * width + p / height;
    switch (d) {
      case Direction::kRowLR: order[p] = p; break;
      case Direction::kRowRL: order[p] = L - 1 - p; break;
      case Direction::kColTB: order[p] = col_major; break;
      case Direction::kColBT: {
        const std::size_t q = L - 1 - p;
        order[p] = (q % height) * width + q / height;
        break;
      }
    }
  }
  return order;
}

CrossScanBundle cross_expand(const FeatureMap2D& f) {
  if (f.dim0() == 0 || f.dim1() == 0 || f.dim2() == 0) {
    throw ShapeError("cross_expand: empty feature map");
  }
  CrossScanBundle bundle;
  bundle.height = f.dim0();
  bundle.width = f.dim1();
  const std::size_t L = bundle.height * bundle.width;
  const std::size_t C = f.dim2();
  for (Direction d : kAllDirections) {
    const auto di = static_cast<std::size_t>(d);
    bundle.order[di] = scan_order(d, bundle.height, bundle.width);
    bundle.inverse[di].assign(L, 0);
    Matrix<double> seq(L, C);
    for (std::size_t p = 0; p < L; ++p) {
      const std::size_t pixel = bundle.order[di][p];
      bundle.inverse[di][pixel] = p;
      const double* src = f.data().data() + pixel * C;
      std::copy(src, src + C, seq.row(p).begin());
    }
    bundle.seqs[di] = std::move(seq);
  }
  return bundle;
}

FeatureMap2D cross_merge(const std::array<Matrix<double>, kNumDirections>& outputs,
                         const CrossScanBundle& bundle) {
  const std::size_t L = bundle.height * bundle.width;
  const std::size_t C = outputs[0].cols();
  for (std::size_t d = 0; d < kNumDirections; ++d) {
    if (outputs[d].rows() != L || outputs[d].cols() != C) {
      throw ShapeError("cross_merge: direction " + std::to_string(d) +
                       " output does not match L x C");
    }
    if (bundle.inverse[d].size() != L) {
      throw ShapeError("cross_merge: inverse permutation length mismatch");
    }
  }
  FeatureMap2D merged(bundle.height, bundle.width, C);
  for (std::size_t pixel = 0; pixel < L; ++pixel) {
    double* dst = merged.data().data() + pixel * C;
    for (std::size_t d = 0; d < kNumDirections; ++d) {
      const auto src = outputs[d].row(bundle.inverse[d][pixel]);
      for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
    }
  }
  return merged;
}

Matrix<double> scan_direction(const Matrix<double>& seq, std::size_t line_length,
                              const ssm::SelectiveParams<double>& params, ScanMode mode) {
  if (mode == ScanMode::kFullSequence) return ssm::scan_sequential(seq, params).y;

  const std::size_t L = seq.rows();
  const std::size_t C = seq.cols();
  if (line_length == 0 || L % line_length != 0) {
    throw ShapeError("scan_direction: sequence length is not a multiple of the line length");
  }
  Matrix<double> y(L, C);
  const std::size_t lines = L / line_length;
  parallel_for(lines, [&](std::size_t begin, std::size_t end) {
    Matrix<double> line(line_length, C);
    for (std::size_t l = begin; l < end; ++l) {
      const std::size_t offset = l * line_length;
      std::copy(seq.data().begin() + offset * C,
                seq.data().begin() + (offset + line_length) * C, line.data().begin());
      try {
        const auto r = ssm::scan_sequential(line, params);
        std::copy(r.y.data().begin(), r.y.data().end(), y.data().begin() + offset * C);
      } catch (const NumericError& e) {
        throw NumericError("scan_direction: " + std::string(e.what()), offset + e.index());
      }
    }
  });
  return y;
}

void ConvSS2DWeights::validate() const {
  const std::size_t C = channels();
  if (C == 0) throw ShapeError("ConvSS2DWeights: zero channels");
  if (dw_kernel.dim0() != C || dw_kernel.dim1() != 3 || dw_kernel.dim2() != 3) {
    throw ShapeError("ConvSS2DWeights: dw_kernel must be C x 3 x 3");
  }
  if (gate_proj.rows() != C || gate_proj.cols() != C || gate_bias.size() != C) {
    throw ShapeError("ConvSS2DWeights: gate projection must be C x C + C");
  }
  if (out_proj.rows() != C || out_proj.cols() != C || out_bias.size() != C) {
    throw ShapeError("ConvSS2DWeights: output projection must be C x C + C");
  }
  if (norm_scale.size() != C || norm_shift.size() != C) {
    throw ShapeError("ConvSS2DWeights: norm scale/shift must have C entries");
  }
  for (const auto& p : directions) {
    p.validate();
    if (p.channels() != C) throw ShapeError("ConvSS2DWeights: direction channel mismatch");
  }
  auto finite = [](const std::vector<double>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) throw NumericError(std::string("ConvSS2DWeights: ") + what, i);
    }
  };
  finite(dw_kernel.data(), "dw_kernel");
  finite(dw_bias, "dw_bias");
  finite(gate_proj.data(), "gate_proj");
  finite(gate_bias, "gate_bias");
  finite(out_proj.data(), "out_proj");
  finite(out_bias, "out_bias");
  finite(norm_scale, "norm_scale");
  finite(norm_shift, "norm_shift");
}

ConvSS2DWeights make_convss2d_weights(std::size_t channels, std::size_t state_dim,
                                      std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t C = channels;
  ConvSS2DWeights w;
  w.dw_kernel = Volume<double>(C, 3, 3);
  for (auto& v : w.dw_kernel.data()) v = rng.uniform(-1.0 / 3.0, 1.0 / 3.0);
  w.dw_bias.assign(C, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(C));
  w.gate_proj = Matrix<double>(C, C);
  for (auto& v : w.gate_proj.data()) v = rng.uniform(-bound, bound);
  w.gate_bias.assign(C, 0.0);
  w.out_proj = Matrix<double>(C, C);
  for (auto& v : w.out_proj.data()) v = rng.uniform(-bound, bound);
  w.out_bias.assign(C, 0.0);
  for (std::size_t d = 0; d < kNumDirections; ++d) {
    w.directions[d] = ssm::make_selective_params(C, state_dim, rng.next_u64());
  }
  w.norm_scale.assign(C, 1.0);
  w.norm_shift.assign(C, 0.0);
  return w;
}

void save_weights(TensorArchive& archive, const std::string& prefix, const ConvSS2DWeights& w) {
  w.validate();
  const std::size_t C = w.channels();
  for (std::size_t d = 0; d < kNumDirections; ++d) {
    ssm::save_params(archive, prefix + "dir" + std::to_string(d) + ".", w.directions[d]);
  }
  const auto c32 = static_cast<std::uint32_t>(C);
  archive.add_narrowed(prefix + "dwconv", {c32, 3, 3}, w.dw_kernel.data());
  put_vector(archive, prefix + "dwconv.bias", w.dw_bias);
  put_matrix(archive, prefix + "gate", w.gate_proj);
  put_vector(archive, prefix + "gate.bias", w.gate_bias);
  put_matrix(archive, prefix + "out", w.out_proj);
  put_vector(archive, prefix + "out.bias", w.out_bias);
  std::vector<double> norm(w.norm_scale);
  norm.insert(norm.end(), w.norm_shift.begin(), w.norm_shift.end());
  archive.add_narrowed(prefix + "norm", {2, c32}, norm);
}

ConvSS2DWeights load_weights(const TensorArchive& archive, const std::string& prefix) {
  ConvSS2DWeights w;
  for (std::size_t d = 0; d < kNumDirections; ++d) {
    w.directions[d] = ssm::load_params(archive, prefix + "dir" + std::to_string(d) + ".");
  }
  const std::size_t C = w.directions[0].channels();
  const auto c32 = static_cast<std::uint32_t>(C);
  w.dw_kernel = Volume<double>(C, 3, 3);
  w.dw_kernel.data() = archive.get_doubles(prefix + "dwconv", {c32, 3, 3});
  w.dw_bias = get_vector(archive, prefix + "dwconv.bias", C);
  w.gate_proj = get_matrix(archive, prefix + "gate", C, C);
  w.gate_bias = get_vector(archive, prefix + "gate.bias", C);
  w.out_proj = get_matrix(archive, prefix + "out", C, C);
  w.out_bias = get_vector(archive, prefix + "out.bias", C);
  const std::vector<double> norm = archive.get_doubles(prefix + "norm", {2, c32});
  w.norm_scale.assign(norm.begin(), norm.begin() + C);
  w.norm_shift.assign(norm.begin() + C, norm.end());
  w.validate();
  return w;
}

double silu(double z) { return z * ssm::sigmoid(z); }

FeatureMap2D depthwise_conv3x3(const FeatureMap2D& f, const Volume<double>& kernel,
                               const std::vector<double>& bias) {
  const std::size_t H = f.dim0(), W = f.dim1(), C = f.dim2();
  if (kernel.dim0() != C || kernel.dim1() != 3 || kernel.dim2() != 3 || bias.size() != C) {
    throw ShapeError("depthwise_conv3x3: kernel must be C x 3 x 3 with C biases");
  }
  FeatureMap2D out(H, W, C);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        auto dst = out.fiber(i, j);
        for (std::size_t c = 0; c < C; ++c) dst[c] = bias[c];
        for (int di = -1; di <= 1; ++di) {
          const auto ii = static_cast<std::ptrdiff_t>(i) + di;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
          for (int dj = -1; dj <= 1; ++dj) {
            const auto jj = static_cast<std::ptrdiff_t>(j) + dj;
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
            const auto src = f.fiber(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            for (std::size_t c = 0; c < C; ++c) {
              dst[c] += kernel(c, static_cast<std::size_t>(di + 1),
                               static_cast<std::size_t>(dj + 1)) * src[c];
            }
          }
        }
      }
    }
  });
  return out;
}

FeatureMap2D convss2d_forward(const FeatureMap2D& f, const ConvSS2DWeights& w,
                              const ConvSS2DOptions& options) {
  w.validate();
  const std::size_t H = f.dim0(), W = f.dim1(), C = f.dim2();
  if (C != w.channels()) {
    throw ShapeError("convss2d_forward: input has " + std::to_string(C) +
                     " channels, weights expect " + std::to_string(w.channels()));
  }
  if (H == 0 || W == 0) throw ShapeError("convss2d_forward: empty feature map");
  require_finite_map(f, "convss2d_forward input");

  FeatureMap2D act = depthwise_conv3x3(f, w.dw_kernel, w.dw_bias);
  for (auto& v : act.data()) v = silu(v);

  const CrossScanBundle bundle = cross_expand(act);
  std::array<Matrix<double>, kNumDirections> outputs;
  for (Direction d : kAllDirections) {
    const auto di = static_cast<std::size_t>(d);
    try {
      outputs[di] = scan_direction(bundle.seqs[di], bundle.line_length(d), w.directions[di],
                                   options.mode);
    } catch (const NumericError& e) {
      const std::size_t pos = std::min(e.index(), bundle.order[di].size() - 1);
      throw NumericError(std::string("convss2d_forward ") + direction_name(d) +
                             " scan diverged",
                         bundle.order[di][pos]);
    }
  }
  const FeatureMap2D merged = cross_merge(outputs, bundle);

  FeatureMap2D out(H, W, C);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    std::vector<double> gated(C);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const auto m = merged.fiber(i, j);
        double mean = 0.0;
        for (double v : m) mean += v;
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (double v : m) var += (v - mean) * (v - mean);
        var /= static_cast<double>(C);
        const double inv_std = 1.0 / std::sqrt(var + options.norm_eps);

        const auto x = f.fiber(i, j);
        for (std::size_t c = 0; c < C; ++c) {
          double g = w.gate_bias[c];
          for (std::size_t k = 0; k < C; ++k) g += w.gate_proj(c, k) * x[k];
          const double normed = (m[c] - mean) * inv_std * w.norm_scale[c] + w.norm_shift[c];
          gated[c] = normed * silu(g);
        }
        auto dst = out.fiber(i, j);
        for (std::size_t c = 0; c < C; ++c) {
          double acc = w.out_bias[c];
          for (std::size_t k = 0; k < C; ++k) acc += w.out_proj(c, k) * gated[k];
          dst[c] = acc;
        }
      }
    }
  });
  require_finite_map(out, "convss2d_forward output");
  return out;
}

}  // namespace scanstereo::scan2d
