// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/synth_scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"
#include "scanstereo/tensor_io.hpp"

namespace scanstereo {

void CameraRig::validate() const {
  if (!(focal_px > 0.0) || !(baseline_m > 0.0) || !std::isfinite(focal_px) ||
      !std::isfinite(baseline_m)) {
    throw ConfigError("CameraRig: focal length and baseline must be positive and finite");
  }
}

}  // namespace scanstereo

namespace scanstereo::synth {
namespace {

// Single-channel surface texture over an H x width canvas in left-image columns.
struct Texture {
  Matrix<double> value;
  std::array<double, 3> tint{};

  double sample(std::size_t y, double x) const {
    const double xc = std::clamp(x, 0.0, static_cast<double>(value.cols() - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(xc));
    const std::size_t x1 = std::min(x0 + 1, value.cols() - 1);
    const double t = xc - static_cast<double>(x0);
    return (1.0 - t) * value(y, x0) + t * value(y, x1);
  }
};

std::vector<double> gaussian_taps(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  for (std::ptrdiff_t k = -r; k <= r; ++k) {
    taps.push_back(std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma)));
  }
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= sum;
  return taps;
}

Texture make_texture(std::size_t height, std::size_t width, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Texture tex;
  for (double& c : tex.tint) c = rng.uniform(0.6, 1.0);
  Matrix<double> noise(height, width);
  for (double& v : noise.data()) v = rng.normal();

  const std::vector<double> taps = gaussian_taps(sigma);
  const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, n - 1));
  };
  Matrix<double> tmp(height, width);
  const auto H = static_cast<std::ptrdiff_t>(height), W = static_cast<std::ptrdiff_t>(width);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        acc += taps[static_cast<std::size_t>(k + r)] *
               noise(static_cast<std::size_t>(y), reflect(x + k, W));
      }
      tmp(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
    }
  }
  double energy = 0.0;
  for (double t : taps) energy += t * t;
  const double scale = 0.18 / energy;  // 2D blur of unit noise has std = energy
  tex.value = Matrix<double>(height, width);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        acc += taps[static_cast<std::size_t>(k + r)] *
               tmp(reflect(y + k, H), static_cast<std::size_t>(x));
      }
      tex.value(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          std::clamp(0.5 + scale * acc, 0.0, 1.0);
    }
  }
  return tex;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string scene_stem(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", k);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0) {
    throw ConfigError("SceneSpec: image size must be a positive multiple of 8");
  }
  if (!(background_depth_m > 0.0) || !std::isfinite(background_depth_m)) {
    throw ConfigError("SceneSpec: background depth must be positive");
  }
  for (const Layer& l : layers) {
    if (!(l.depth_m > 0.0) || !std::isfinite(l.depth_m)) {
      throw ConfigError("SceneSpec: layer depth must be positive");
    }
    if (l.depth_m >= background_depth_m) {
      throw ConfigError("SceneSpec: layers must lie in front of the background");
    }
    if (l.bounds.x0 >= l.bounds.x1 || l.bounds.y0 >= l.bounds.y1 || l.bounds.x1 > width ||
        l.bounds.y1 > height) {
      throw ConfigError("SceneSpec: layer bounds must be a non-empty rectangle inside the image");
    }
  }
}

void UnderwaterParams::validate() const {
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(beta[c] >= 0.0) || !std::isfinite(beta[c])) {
      throw ConfigError("UnderwaterParams: beta must be non-negative");
    }
    if (!(veil[c] >= 0.0 && veil[c] <= 1.0)) {
      throw ConfigError("UnderwaterParams: veil must lie in [0, 1]");
    }
  }
}

double snap_depth(double depth_m, const CameraRig& rig, std::size_t quantum) {
  rig.validate();
  if (quantum == 0) throw ConfigError("snap_depth: quantum must be positive");
  const double q = static_cast<double>(quantum);
  const double d = std::max(q, std::round(rig.disparity(depth_m) / q) * q);
  return rig.depth(d);
}

StereoPair render_stereo(const SceneSpec& spec_in, const CameraRig& rig, std::uint64_t seed,
                         const RenderOptions& options) {
  spec_in.validate();
  rig.validate();
  SceneSpec spec = spec_in;
  if (options.integer_disparity) {
    spec.background_depth_m = snap_depth(spec.background_depth_m, rig, options.disparity_quantum);
    for (Layer& l : spec.layers) l.depth_m = snap_depth(l.depth_m, rig, options.disparity_quantum);
  }

  // Surfaces ordered nearest first; the background plane is last and covers
  // everything.
  std::vector<std::size_t> order(spec.layers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.layers[a].depth_m < spec.layers[b].depth_m;
  });
  const std::size_t S = order.size() + 1;
  std::vector<double> depth(S), disp(S);
  std::vector<Rect> bounds(S);
  std::vector<std::uint64_t> tex_seed(S);
  for (std::size_t s = 0; s + 1 < S; ++s) {
    const Layer& l = spec.layers[order[s]];
    depth[s] = l.depth_m;
    bounds[s] = l.bounds;
    tex_seed[s] = mix_seed(seed, l.texture_seed);
  }
  depth[S - 1] = spec.background_depth_m;
  bounds[S - 1] = Rect{0, 0, spec.width, spec.height};
  tex_seed[S - 1] = mix_seed(seed ^ 0x5bd1e995ULL, spec.background_seed);

  const std::size_t H = spec.height, W = spec.width;
  const double limit = (static_cast<double>(W) / 4.0 - 1.0) * 4.0;
  double max_disp = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    disp[s] = rig.disparity(depth[s]);
    max_disp = std::max(max_disp, disp[s]);
  }
  if (max_disp > limit) {
    throw ConfigError("render_stereo: disparity " + std::to_string(max_disp) +
                      " px exceeds the matchable range of " + std::to_string(limit) + " px");
  }

  const std::size_t canvas = W + static_cast<std::size_t>(std::ceil(max_disp)) + 2;
  std::vector<Texture> textures(S);
  parallel_for(S, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      textures[s] = make_texture(H, canvas, spec.texture_sigma, tex_seed[s]);
    }
  }, 1);

  StereoPair out;
  out.left = Image(H, W, 3);
  out.right = Image(H, W, 3);
  out.gt_disp = Matrix<double>(H, W);
  out.depth_left = Matrix<double>(H, W);
  out.depth_right = Matrix<double>(H, W);
  out.occluded = Matrix<std::uint8_t>(H, W, 0);
  out.layer_depths = depth;

  Matrix<std::size_t> left_id(H, W), right_id(H, W);
  const auto covers = [&](std::size_t s, std::size_t y, double x) {
    const Rect& b = bounds[s];
    return y >= b.y0 && y < b.y1 && x >= static_cast<double>(b.x0) &&
           x < static_cast<double>(b.x1);
  };
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t sl = S - 1, sr = S - 1;
      for (std::size_t s = 0; s + 1 < S; ++s) {
        if (covers(s, y, static_cast<double>(x))) {
          sl = s;
          break;
        }
      }
      for (std::size_t s = 0; s + 1 < S; ++s) {
        if (covers(s, y, static_cast<double>(x) + disp[s])) {
          sr = s;
          break;
        }
      }
      left_id(y, x) = sl;
      right_id(y, x) = sr;
      const double vl = textures[sl].sample(y, static_cast<double>(x));
      const double vr = textures[sr].sample(y, static_cast<double>(x) + disp[sr]);
      for (std::size_t c = 0; c < 3; ++c) {
        out.left(y, x, c) = textures[sl].tint[c] * vl;
        out.right(y, x, c) = textures[sr].tint[c] * vr;
      }
      out.gt_disp(y, x) = disp[sl];
      out.depth_left(y, x) = depth[sl];
      out.depth_right(y, x) = depth[sr];
    }
  }

  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t s = left_id(y, x);
      const double xr = static_cast<double>(x) - disp[s];
      bool hidden = xr < 0.0;
      if (!hidden) {
        const auto lo = static_cast<std::size_t>(std::floor(xr));
        const auto hi = static_cast<std::size_t>(std::ceil(xr));
        hidden = hi >= W || right_id(y, lo) != s || right_id(y, hi) != s;
      }
      out.occluded(y, x) = hidden ? 1 : 0;
    }
  }
  return out;
}

Image apply_underwater(const Image& img, const Matrix<double>& depth,
                       const UnderwaterParams& p) {
  p.validate();
  if (img.dim2() != 3 || depth.rows() != img.dim0() || depth.cols() != img.dim1()) {
    throw ShapeError("apply_underwater: depth map must match the image");
  }
  Image out(img.dim0(), img.dim1(), 3);
  for (std::size_t y = 0; y < img.dim0(); ++y) {
    for (std::size_t x = 0; x < img.dim1(); ++x) {
      const double z = depth(y, x);
      for (std::size_t c = 0; c < 3; ++c) {
        const double t = std::exp(-p.beta[c] * z);
        out(y, x, c) = img(y, x, c) * t + p.veil[c] * (1.0 - t);
      }
    }
  }
  return out;
}

SampledScene sample_scene(Rng& rng, const SamplerOptions& o) {
  if (!(o.min_disparity > 0.0) || o.max_disparity < o.min_disparity || o.grid == 0 ||
      o.min_size == 0 || o.max_size < o.min_size || o.min_jump < 0.0 ||
      o.max_jump < o.min_jump) {
    throw ConfigError("sample_scene: invalid sampler options");
  }
  SampledScene out;
  out.rig.focal_px = o.focal_px;
  out.rig.baseline_m = o.baseline_m.value_or(
      kRigBaselines[static_cast<std::size_t>(rng.uniform_int(0, kRigBaselines.size() - 1))]);
  out.rig.validate();

  SceneSpec& spec = out.spec;
  spec.width = o.width;
  spec.height = o.height;
  const double d_bg = rng.uniform(o.min_disparity, o.max_disparity);
  spec.background_depth_m = out.rig.depth(d_bg);
  spec.background_seed = rng.next_u64();

  if (rng.uniform() < o.two_plane_probability) {
    const double d_fg = d_bg + rng.uniform(o.min_jump, o.max_jump);
    const auto snap = [&](std::size_t v) { return v / o.grid * o.grid; };
    const auto side = [&] {
      return std::max(o.grid, snap(static_cast<std::size_t>(
                                  rng.uniform_int(static_cast<std::int64_t>(o.min_size),
                                                  static_cast<std::int64_t>(o.max_size)))));
    };
    const std::size_t w = side();
    const std::size_t h = side();
    const auto margin = static_cast<std::size_t>(std::ceil(d_fg)) + 16;
    if (o.width > w + margin + 16 && o.height > h + 32) {
      Layer l;
      l.depth_m = out.rig.depth(d_fg);
      const auto x0 = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(margin),
                          static_cast<std::int64_t>(o.width - w - 16)));
      const auto y0 = static_cast<std::size_t>(
          rng.uniform_int(16, static_cast<std::int64_t>(o.height - h - 16)));
      l.bounds = Rect{snap(x0), snap(y0), snap(x0) + w, snap(y0) + h};
      l.texture_seed = rng.next_u64();
      spec.layers.push_back(l);
    }
  }
  return out;
}

std::string dataset_emit(std::size_t n, const std::filesystem::path& out_dir,
                         const DatasetOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("dataset_emit: cannot create directory: " + ec.message(), out_dir.string());

  Rng rng(options.seed);
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["master_seed"] = options.seed;
  manifest["integer_disparity"] = options.render.integer_disparity;
  manifest["disparity_quantum"] = options.render.disparity_quantum;
  manifest["scenes"] = nlohmann::ordered_json::array();

  for (std::size_t k = 0; k < n; ++k) {
    const SampledScene scene = sample_scene(rng, options.sampler);
    const std::uint64_t render_seed = rng.next_u64();
    StereoPair pair = render_stereo(scene.spec, scene.rig, render_seed, options.render);

    std::optional<UnderwaterParams> water = options.underwater;
    if (!water && options.random_underwater) {
      UnderwaterParams p;
      p.beta = {rng.uniform(0.2, 0.5), rng.uniform(0.05, 0.2), rng.uniform(0.02, 0.15)};
      p.veil = {rng.uniform(0.0, 0.15), rng.uniform(0.2, 0.5), rng.uniform(0.3, 0.6)};
      water = p;
    }
    if (water) {
      pair.left = apply_underwater(pair.left, pair.depth_left, *water);
      pair.right = apply_underwater(pair.right, pair.depth_right, *water);
    }

    const std::string stem = scene_stem(k);
    ppm_write(out_dir / (stem + "_left.ppm"), pair.left);
    ppm_write(out_dir / (stem + "_right.ppm"), pair.right);
    pfm_write_narrowed(out_dir / (stem + "_disp.pfm"), pair.gt_disp);
    Matrix<double> occ(pair.occluded.rows(), pair.occluded.cols());
    for (std::size_t i = 0; i < occ.size(); ++i) occ.data()[i] = pair.occluded.data()[i];
    pfm_write_narrowed(out_dir / (stem + "_occ.pfm"), occ);

    nlohmann::ordered_json entry;
    entry["id"] = stem;
    entry["files"] = {{"left", stem + "_left.ppm"},
                      {"right", stem + "_right.ppm"},
                      {"disparity", stem + "_disp.pfm"},
                      {"occlusion", stem + "_occ.pfm"}};
    entry["rig"] = {{"focal_px", scene.rig.focal_px}, {"baseline_m", scene.rig.baseline_m}};
    entry["render_seed"] = render_seed;
    entry["width"] = scene.spec.width;
    entry["height"] = scene.spec.height;
    entry["background"] = {{"depth_m", pair.layer_depths.back()},
                           {"texture_seed", scene.spec.background_seed}};
    entry["layers"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < scene.spec.layers.size(); ++i) {
      const Layer& l = scene.spec.layers[i];
      // layer_depths is nearest-first; with at most one layer it lines up.
      const double z = options.render.integer_disparity
                           ? snap_depth(l.depth_m, scene.rig, options.render.disparity_quantum)
                           : l.depth_m;
      entry["layers"].push_back({{"depth_m", z},
                                 {"bounds", {l.bounds.x0, l.bounds.y0, l.bounds.x1, l.bounds.y1}},
                                 {"texture_seed", l.texture_seed}});
    }
    if (water) {
      entry["underwater"] = {{"beta", water->beta}, {"veil", water->veil}};
    } else {
      entry["underwater"] = nullptr;
    }
    manifest["scenes"].push_back(entry);
  }

  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(out_dir / "manifest.json",
                   std::vector<std::uint8_t>(text.begin(), text.end()));
  return text;
}

}  // namespace scanstereo::synth
