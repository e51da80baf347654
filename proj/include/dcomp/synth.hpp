// SPDX-License-Identifier: Apache-2.0
//
// Procedural street-like scenes rendered by ray casting: a ground plane, a
// backdrop wall and a handful of boxes, poles and spheres. Depth is the
// camera-frame z distance, colour is Lambertian shading of per-object albedo
// under one directional light, so colour edges coincide with silhouettes.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dcomp/depth_map.hpp"

namespace dcomp {

enum class SparsePattern { kUniform, kScanline };

SparsePattern parse_sparse_pattern(const std::string& name);
std::string to_string(SparsePattern pattern);

struct SceneConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  double fov_deg = 60.0;  // horizontal
  double camera_height = 1.65;
  double pitch_deg = 8.0;  // downward tilt
  double depth_min = 3.0;  // closest object placement
  double depth_max = 40.0;  // backdrop distance upper bound
  int n_boxes = 3;
  int n_poles = 2;
  int n_spheres = 1;
  bool backdrop = true;
  std::array<double, 3> light_dir{-0.4, 0.8, -0.45};
  double ambient = 0.25;
  double sparse_density = 0.05;
  SparsePattern sparse_pattern = SparsePattern::kUniform;
  double gt_density = 1.0;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct SceneRender {
  RgbImage rgb;
  DepthMap depth;                // fully valid
  std::vector<int> object_id;    // 0 ground, 1 backdrop, >= 2 objects
};

/// Deterministic in (config, seed).
SceneRender synth_scene(const SceneConfig& config, std::uint64_t seed);

/// Keeps round(density * H * W) pixels of a fully valid map. The scanline
/// pattern restricts samples to equally spaced rows.
DepthMap sparsify(const DepthMap& dense, double density, std::uint64_t seed,
                  SparsePattern pattern = SparsePattern::kUniform);

/// Rounds every valid depth to the 1/256 m grid of the depth PNG format.
DepthMap quantize_to_png_grid(const DepthMap& map);
/// Rounds every channel value to the 8-bit grid.
RgbImage quantize_to_8bit(const RgbImage& image);

}  // namespace dcomp
