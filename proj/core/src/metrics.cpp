// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "scanstereo/errors.hpp"

namespace scanstereo::metrics {
namespace {

void check_shapes(const Matrix<double>& a, const Matrix<double>& b,
                  const Matrix<std::uint8_t>& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.rows() != a.rows() ||
      mask.cols() != a.cols()) {
    throw ShapeError("metrics: prediction, ground truth and mask shapes differ");
  }
}

nlohmann::ordered_json report_json(const MetricReport& r) {
  return {{"absrel", r.absrel}, {"sqrel", r.sqrel},   {"rmse", r.rmse},
          {"logrmse", r.logrmse}, {"delta1", r.delta1}, {"delta2", r.delta2},
          {"delta3", r.delta3}, {"valid_pixel_count", r.valid_pixel_count}};
}

}  // namespace

DepthMap disparity_to_depth(const Matrix<double>& disparity, const CameraRig& rig) {
  rig.validate();
  DepthMap out{Matrix<double>(disparity.rows(), disparity.cols(), 0.0),
               Matrix<std::uint8_t>(disparity.rows(), disparity.cols(), 0)};
  for (std::size_t k = 0; k < disparity.size(); ++k) {
    const double d = disparity.data()[k];
    if (d > kMinDisparity && std::isfinite(d)) {
      out.z.data()[k] = rig.depth(d);
      out.valid.data()[k] = 1;
    }
  }
  return out;
}

DepthMap depth_to_disparity(const Matrix<double>& depth, const CameraRig& rig) {
  rig.validate();
  DepthMap out{Matrix<double>(depth.rows(), depth.cols(), 0.0),
               Matrix<std::uint8_t>(depth.rows(), depth.cols(), 0)};
  for (std::size_t k = 0; k < depth.size(); ++k) {
    const double z = depth.data()[k];
    if (z > 0.0 && std::isfinite(z)) {
      out.z.data()[k] = rig.disparity(z);
      out.valid.data()[k] = 1;
    }
  }
  return out;
}

MetricReport compute_metrics(const Matrix<double>& pred, const Matrix<double>& gt,
                             const Matrix<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  std::size_t n = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask.data()[k]) continue;
    ++n;
    if (!(pred.data()[k] > 0.0) || !(gt.data()[k] > 0.0) || !std::isfinite(pred.data()[k]) ||
        !std::isfinite(gt.data()[k])) {
      throw ConfigError("compute_metrics: depths must be positive and finite on the mask");
    }
  }
  if (n == 0) throw EmptyReportError("compute_metrics: mask selects no pixels");

  const double t1 = 1.25, t2 = t1 * t1, t3 = t2 * t1;
  double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, log_sq = 0.0;
  std::size_t c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask.data()[k]) continue;
    const double p = pred.data()[k], g = gt.data()[k];
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double ld = std::log(p) - std::log(g);
    log_sq += ld * ld;
    const double ratio = std::max(p / g, g / p);
    c1 += ratio < t1;
    c2 += ratio < t2;
    c3 += ratio < t3;
  }
  const double inv = 1.0 / static_cast<double>(n);
  MetricReport r;
  r.absrel = abs_rel * inv;
  r.sqrel = sq_rel * inv;
  r.rmse = std::sqrt(sq * inv);
  r.logrmse = std::sqrt(log_sq * inv);
  r.delta1 = static_cast<double>(c1) * inv;
  r.delta2 = static_cast<double>(c2) * inv;
  r.delta3 = static_cast<double>(c3) * inv;
  r.valid_pixel_count = n;
  return r;
}

MetricReport aggregate(std::span<const MetricReport> reports) {
  if (reports.empty()) throw EmptyReportError("aggregate: no reports");
  std::size_t total = 0;
  for (const MetricReport& r : reports) total += r.valid_pixel_count;
  if (total == 0) throw EmptyReportError("aggregate: zero total pixels");
  MetricReport out;
  for (const MetricReport& r : reports) {
    const double w = static_cast<double>(r.valid_pixel_count) / static_cast<double>(total);
    out.absrel += w * r.absrel;
    out.sqrel += w * r.sqrel;
    out.rmse += w * r.rmse;
    out.logrmse += w * r.logrmse;
    out.delta1 += w * r.delta1;
    out.delta2 += w * r.delta2;
    out.delta3 += w * r.delta3;
  }
  if (reports.size() == 1) out = reports.front();
  out.valid_pixel_count = total;
  return out;
}

double end_point_error(const Matrix<double>& pred, const Matrix<double>& gt,
                       const Matrix<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask.data()[k]) continue;
    acc += std::abs(pred.data()[k] - gt.data()[k]);
    ++n;
  }
  if (n == 0) throw EmptyReportError("end_point_error: mask selects no pixels");
  return acc / static_cast<double>(n);
}

double fraction_within(const Matrix<double>& pred, const Matrix<double>& gt,
                       const Matrix<std::uint8_t>& mask, double threshold) {
  check_shapes(pred, gt, mask);
  std::size_t hit = 0, n = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask.data()[k]) continue;
    hit += std::abs(pred.data()[k] - gt.data()[k]) <= threshold;
    ++n;
  }
  if (n == 0) throw EmptyReportError("fraction_within: mask selects no pixels");
  return static_cast<double>(hit) / static_cast<double>(n);
}

std::string to_json(const MetricReport& r) { return report_json(r).dump(2); }

std::string to_json(std::span<const NamedReport> rows, const MetricReport& total) {
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const NamedReport& row : rows) {
    nlohmann::ordered_json e = report_json(row.report);
    e["name"] = row.name;
    j["images"].push_back(e);
  }
  j["aggregate"] = report_json(total);
  j["aggregation"] = "pixel_weighted_mean_of_per_image_means";
  return j.dump(2);
}

std::string format_table(std::span<const NamedReport> rows, const MetricReport& total) {
  std::size_t name_width = 9;
  for (const NamedReport& row : rows) name_width = std::max(name_width, row.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %9s %9s %9s %9s %9s %9s %9s %9s\n",
                static_cast<int>(name_width), "image", "Rel", "SqRel", "RMSE", "Log RMSE",
                "A1", "A2", "A3", "pixels");
  out += buf;
  const auto line = [&](const std::string& name, const MetricReport& r) {
    std::snprintf(buf, sizeof buf, "%-*s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9zu\n",
                  static_cast<int>(name_width), name.c_str(), r.absrel, r.sqrel, r.rmse,
                  r.logrmse, r.delta1, r.delta2, r.delta3, r.valid_pixel_count);
    out += buf;
  };
  for (const NamedReport& row : rows) line(row.name, row.report);
  line("aggregate", total);
  return out;
}

}  // namespace scanstereo::metrics
