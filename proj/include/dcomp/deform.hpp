// SPDX-License-Identifier: Apache-2.0
//
// Single-pass deformable residual refinement:
//
//   D_p = D^_p + sum_{q in N(p)} W_pq * D^(q + delta_q)
//
// N(p) is the full k x k grid centred on p (centre tap included). Taps are
// enumerated row-major over (dy, dx) in [-r, r]^2, r = k / 2. For tap t the
// offset channels are 2t (row displacement, "x") and 2t+1 (column
// displacement, "y"); D^ is sampled bilinearly with border clamping.
//
// Weights are sigmoid outputs of a 1x1 conv over the guidance features and
// are used as-is. With `subtract_mean_weights` each pixel's k^2 weights are
// centred to zero sum before use.

#pragma once

#include <string>
#include <vector>

#include "dcomp/checkpoint.hpp"
#include "dcomp/depth_map.hpp"
#include "dcomp/tensor.hpp"

namespace dcomp {

/// Per-pixel tap weights, stored channel-major as [k*k][H][W].
struct KernelField {
  std::size_t height = 0, width = 0, k = 0;
  std::vector<double> values;
};

/// Per-pixel tap offsets in pixels, stored as [2*k*k][H][W] with channels
/// (dx_1, dy_1, ..., dx_kk, dy_kk).
struct OffsetField {
  std::size_t height = 0, width = 0, k = 0;
  std::vector<double> values;
};

/// Bias giving every initial tap weight `total / k^2`.
double weight_bias_for_total(std::size_t k, double total);
/// Initial weight-head bias: every tap starts at sigmoid(-4), about 0.018,
/// so the untrained residual is small but the weights can still grow within
/// a short training budget.
inline constexpr double kInitialWeightBias = -4.0;

struct RefineHeads {
  std::size_t in_channels = 0;
  std::size_t k = 3;
  Tensor weight_w, weight_b;  // [k^2, C, 1, 1], [k^2]
  Tensor offset_w, offset_b;  // [2k^2, C, 1, 1], [2k^2]

  /// Near-identity start: zero offsets, zero weight-head kernel, constant
  /// weight-head bias.
  static RefineHeads create(std::size_t in_channels, std::size_t k, double weight_bias);
  ParamList params(const std::string& prefix = "refine") const;
};

void require_odd_kernel(std::size_t k);

struct FieldTensors {
  Tensor weights;  // [N, k^2, H, W] in (0, 1)
  Tensor offsets;  // [N, 2k^2, H, W]
};

/// z is the channel concatenation {Z_d, Z_c} as [N, C, H, W].
FieldTensors predict_fields(const Tensor& z, const RefineHeads& heads);

/// The refinement operator on [N,1,H,W] coarse depth, differentiable with
/// respect to all three tensor inputs.
Tensor deform_refine(const Tensor& coarse, const Tensor& weights, const Tensor& offsets, std::size_t k,
                     bool subtract_mean_weights = false);

/// Map-level refinement. `coarse` must be fully valid; outputs that are not
/// strictly positive (possible only with mean subtraction) become invalid.
DepthMap refine(const DepthMap& coarse, const KernelField& weights, const OffsetField& offsets, std::size_t k,
                bool subtract_mean_weights = false);

/// predict_fields followed by one deform_refine.
Tensor refine_module_forward(const Tensor& coarse, const Tensor& z, const RefineHeads& heads,
                             bool subtract_mean_weights = false);
DepthMap refine_module_forward(const DepthMap& coarse, const Tensor& z, const RefineHeads& heads,
                               bool subtract_mean_weights = false);

KernelField to_kernel_field(const Tensor& weights);  // from [1, k^2, H, W]
OffsetField to_offset_field(const Tensor& offsets);  // from [1, 2k^2, H, W]

}  // namespace dcomp
