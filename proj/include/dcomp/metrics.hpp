// SPDX-License-Identifier: Apache-2.0
//
// KITTI depth-completion metrics. Errors are pooled over every valid
// groundtruth pixel of every frame (devkit convention) and converted at the
// boundary: depth errors in mm, inverse-depth errors in 1/km. A zero
// prediction at a valid pixel drives the inverse metrics to +inf.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcomp/depth_map.hpp"

namespace dcomp {

struct FrameMetrics {
  std::string key;
  double rmse_mm = 0.0;
  double mae_mm = 0.0;
  double irmse_per_km = 0.0;
  double imae_per_km = 0.0;
  std::size_t n_valid = 0;
};

struct MetricReport {
  double rmse_mm = 0.0;
  double mae_mm = 0.0;
  double irmse_per_km = 0.0;
  double imae_per_km = 0.0;
  std::size_t n_valid_pixels = 0;
  std::vector<FrameMetrics> frames;
};

class MetricAccumulator {
 public:
  void add(const DepthMap& prediction, const DepthMap& groundtruth, const std::string& key = "");
  MetricReport report() const;

 private:
  double sq_ = 0.0, abs_ = 0.0, isq_ = 0.0, iabs_ = 0.0;
  std::size_t n_ = 0;
  std::vector<FrameMetrics> frames_;
};

MetricReport compute_metrics(const DepthMap& prediction, const DepthMap& groundtruth);

inline constexpr const char* kMetricCsvHeader = "method,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm";

/// `method,rmse,mae,irmse,imae` with infinities written as `inf`.
std::string metric_csv_row(const std::string& method, const MetricReport& report);
std::string format_metric(double value);

}  // namespace dcomp
