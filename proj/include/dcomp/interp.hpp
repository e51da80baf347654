// SPDX-License-Identifier: Apache-2.0
//
// Classical scattered-data densification of sparse depth maps.
//
//   Nearest  exact Euclidean nearest valid pixel; ties go to the smaller row,
//            then the smaller column. Always fully valid.
//   Linear   barycentric interpolation over the Delaunay triangulation of the
//            valid pixels; pixels outside the convex hull stay invalid.
//   Cubic    Clough-Tocher C1 cubic over the same triangulation, vertex
//            gradients from a least-squares plane over each vertex's 1-ring.
//   Rbf      thin-plate spline with an affine term, fitted on at most
//            `rbf_max_sites` randomly chosen valid pixels.
//
// Every method returns the input depth at input-valid pixels. Interpolated
// values that are not strictly positive are left invalid.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcomp/depth_map.hpp"
#include "dcomp/metrics.hpp"

namespace dcomp {

enum class InterpMethod { kNearest, kLinear, kCubic, kRbf };

InterpMethod parse_interp_method(const std::string& name);
std::string to_string(InterpMethod method);

struct DensifyOptions {
  std::size_t rbf_max_sites = 2000;
  std::uint64_t rbf_seed = 20240917;
};

DepthMap densify(const DepthMap& sparse, InterpMethod method, const DensifyOptions& options = {});

struct RbfSample {
  double x, y, value;
};

/// Thin-plate spline through `sites` (pixel coordinates), evaluated at the
/// query points. Exposed for conditioning checks.
std::vector<double> thin_plate_spline(const std::vector<RbfSample>& sites, const std::vector<RbfSample>& queries,
                                      double coordinate_scale);

struct BaselineFrame {
  std::string key;
  DepthMap sparse;
  DepthMap groundtruth;
};

struct BaselineResult {
  InterpMethod method;
  MetricReport report;
};

/// Densifies every frame with each method and pools the metrics.
std::vector<BaselineResult> evaluate_baselines(const std::vector<BaselineFrame>& dataset,
                                               const std::vector<InterpMethod>& methods,
                                               const DensifyOptions& options = {});

}  // namespace dcomp
