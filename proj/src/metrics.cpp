// SPDX-License-Identifier: Apache-2.0

#include "dcomp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace dcomp {

namespace {

struct Sums {
  double sq = 0.0, abs = 0.0, isq = 0.0, iabs = 0.0;
  std::size_t n = 0;
};

Sums accumulate(const DepthMap& pred, const DepthMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw std::invalid_argument("metrics: prediction and groundtruth sizes differ");
  }
  Sums s;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid_at(i)) continue;
    const double d = pred.depth_at(i), y = gt.depth_at(i);
    const double e = d - y;
    s.sq += e * e;
    s.abs += std::abs(e);
    if (d <= 0.0) {
      s.isq = s.iabs = std::numeric_limits<double>::infinity();
    } else {
      const double ie = 1.0 / d - 1.0 / y;
      s.isq += ie * ie;
      s.iabs += std::abs(ie);
    }
    ++s.n;
  }
  return s;
}

void finish(const Sums& s, double& rmse, double& mae, double& irmse, double& imae) {
  if (s.n == 0) {
    rmse = mae = irmse = imae = 0.0;
    return;
  }
  const double n = static_cast<double>(s.n);
  rmse = std::sqrt(s.sq / n) * 1000.0;
  mae = s.abs / n * 1000.0;
  irmse = std::sqrt(s.isq / n) * 1000.0;
  imae = s.iabs / n * 1000.0;
}

}  // namespace

void MetricAccumulator::add(const DepthMap& prediction, const DepthMap& groundtruth, const std::string& key) {
  const Sums s = accumulate(prediction, groundtruth);
  sq_ += s.sq;
  abs_ += s.abs;
  isq_ += s.isq;
  iabs_ += s.iabs;
  n_ += s.n;
  FrameMetrics f;
  f.key = key;
  f.n_valid = s.n;
  finish(s, f.rmse_mm, f.mae_mm, f.irmse_per_km, f.imae_per_km);
  frames_.push_back(std::move(f));
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  finish({sq_, abs_, isq_, iabs_, n_}, r.rmse_mm, r.mae_mm, r.irmse_per_km, r.imae_per_km);
  r.n_valid_pixels = n_;
  r.frames = frames_;
  return r;
}

MetricReport compute_metrics(const DepthMap& prediction, const DepthMap& groundtruth) {
  MetricAccumulator acc;
  acc.add(prediction, groundtruth);
  return acc.report();
}

std::string format_metric(double value) {
  if (std::isinf(value)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", value);
  return buf;
}

std::string metric_csv_row(const std::string& method, const MetricReport& r) {
  return method + "," + format_metric(r.rmse_mm) + "," + format_metric(r.mae_mm) + "," +
         format_metric(r.irmse_per_km) + "," + format_metric(r.imae_per_km);
}

}  // namespace dcomp
