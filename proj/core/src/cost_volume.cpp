// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/cost_volume.hpp"

#include <algorithm>
#include <cmath>

#include "scanstereo/errors.hpp"
#include "scanstereo/parallel.hpp"

namespace scanstereo::cost {

CorrelationVolume build_correlation(const FeatureMap2D& left, const FeatureMap2D& right) {
  if (!left.same_shape(right)) {
    throw ShapeError("build_correlation: left and right feature maps differ in shape");
  }
  const std::size_t H = left.dim0(), W = left.dim1(), D = left.dim2();
  if (D == 0 || H == 0 || W == 0) throw ShapeError("build_correlation: empty features");

  CorrelationVolume vol{Volume<double>(H, W, W), D};
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const auto fl = left.fiber(i, j);
        auto dst = vol.c.fiber(i, j);
        for (std::size_t k = 0; k < W; ++k) {
          const auto fr = right.fiber(i, k);
          double acc = 0.0;
          for (std::size_t d = 0; d < D; ++d) acc += fl[d] * fr[d];
          dst[k] = acc;
        }
      }
    }
  });
  return vol;
}

CorrPyramid build_pyramid(const CorrelationVolume& volume, std::size_t levels) {
  CorrPyramid pyr;
  if (levels == 0) return pyr;
  pyr.levels.push_back(volume.c);
  while (pyr.levels.size() < levels) {
    const Volume<double>& prev = pyr.levels.back();
    const std::size_t w_prev = prev.dim2();
    if (w_prev < 2) {
      pyr.truncated = true;
      break;
    }
    const std::size_t w_next = w_prev / 2;  // odd tail dropped
    Volume<double> next(prev.dim0(), prev.dim1(), w_next);
    for (std::size_t i = 0; i < prev.dim0(); ++i) {
      for (std::size_t j = 0; j < prev.dim1(); ++j) {
        const auto src = prev.fiber(i, j);
        auto dst = next.fiber(i, j);
        for (std::size_t k = 0; k < w_next; ++k) dst[k] = 0.5 * (src[2 * k] + src[2 * k + 1]);
      }
    }
    pyr.levels.push_back(std::move(next));
  }
  return pyr;
}

double sample_level(const Volume<double>& level, std::size_t i, std::size_t j, double pos) {
  const auto width = static_cast<std::ptrdiff_t>(level.dim2());
  const double base = std::floor(pos);
  const double t = pos - base;
  const auto k0 = static_cast<std::ptrdiff_t>(base);
  const auto fiber = level.fiber(i, j);
  auto at = [&](std::ptrdiff_t k) {
    return (k >= 0 && k < width) ? fiber[static_cast<std::size_t>(k)] : 0.0;
  };
  if (t == 0.0) return at(k0);
  return (1.0 - t) * at(k0) + t * at(k0 + 1);
}

FeatureMap2D lookup(const CorrPyramid& pyramid, const DisparityMap& disparity,
                    std::size_t radius) {
  if (pyramid.levels.empty()) throw ShapeError("lookup: empty pyramid");
  const std::size_t H = pyramid.levels[0].dim0();
  const std::size_t W = pyramid.levels[0].dim1();
  if (disparity.height() != H || disparity.width() != W) {
    throw ShapeError("lookup: disparity map does not match the volume resolution");
  }
  const std::size_t taps = 2 * radius + 1;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  FeatureMap2D out(H, W, kPyramidLevels * taps);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        auto dst = out.fiber(i, j);
        const double match = static_cast<double>(j) - disparity.d(i, j);
        for (std::size_t l = 0; l < pyramid.levels.size() && l < kPyramidLevels; ++l) {
          const double centre = match / std::ldexp(1.0, static_cast<int>(l));
          for (std::ptrdiff_t o = -r; o <= r; ++o) {
            dst[l * taps + static_cast<std::size_t>(o + r)] =
                sample_level(pyramid.levels[l], i, j, centre + static_cast<double>(o));
          }
        }
      }
    }
  });
  return out;
}

double parabola_offset(double c_minus, double c_center, double c_plus) {
  const double denom = c_minus - 2.0 * c_center + c_plus;
  if (!(denom < 0.0)) return 0.0;
  return 0.5 * (c_minus - c_plus) / denom;
}

DisparityMap wta_disparity(const CorrelationVolume& volume) {
  const Volume<double>& c = volume.c;
  const std::size_t H = c.dim0(), W = c.dim1();
  const std::size_t K = c.dim2();
  DisparityMap out(H, W);
  parallel_for(H, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const auto curve = c.fiber(i, j);
        const std::size_t last = std::min(j, K - 1);
        std::size_t best = last;
        for (std::size_t k = last; k-- > 0;) {
          if (curve[k] > curve[best]) best = k;  // strict: ties keep larger k
        }
        double position = static_cast<double>(best);
        if (best > 0 && best + 1 < K) {
          position += parabola_offset(curve[best - 1], curve[best], curve[best + 1]);
        }
        out.d(i, j) = std::max(0.0, static_cast<double>(j) - position);
      }
    }
  });
  return out;
}

}  // namespace scanstereo::cost
