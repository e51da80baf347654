// SPDX-License-Identifier: Apache-2.0
//
// Loss, optimizer, learning-rate schedules and data augmentation.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcomp/checkpoint.hpp"
#include "dcomp/depth_map.hpp"
#include "dcomp/tensor.hpp"

namespace dcomp {

// ---------------------------------------------------------------------------
// Loss: alpha * l2 + (1 - alpha) * l1 over pixels with valid target.

enum class Reduction { kMean, kSum };

struct LossConfig {
  double alpha = 0.5;
  Reduction reduction = Reduction::kMean;
  // Extra weight on the same loss evaluated on the fused coarse depth.
  double aux_coarse_weight = 0.0;

  void validate() const;
};

nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// `target` holds meters with 0 marking pixels excluded from the loss; it
/// carries no gradient. Rejects targets without a valid pixel.
Tensor masked_loss(const Tensor& prediction, const Tensor& target, const LossConfig& cfg);
double masked_loss(const DepthMap& prediction, const DepthMap& target, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizer

struct Schedule {
  enum class Type { kCosine, kStaircase, kConstant };
  Type type = Type::kCosine;
  std::vector<std::size_t> milestones;  // staircase only
  std::vector<double> factors;          // staircase only, same length
};

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-5;
  double eps = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 2;
  Schedule schedule;

  void validate() const;
};

nlohmann::json to_json(const OptimConfig& cfg);
OptimConfig optim_config_from_json(const nlohmann::json& j);

/// Learning rate for a 0-based epoch in [0, epochs).
double lr_at(const OptimConfig& cfg, std::size_t epoch);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction; weight decay enters as an L2 term added to the
/// gradient. Parameters without a gradient are treated as having zero grad.
class Adam {
 public:
  Adam(ParamList params, const OptimConfig& cfg);

  /// Throws NonFiniteGradient (naming the parameter) before touching any
  /// value if a gradient is NaN or infinite.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  ParamList params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool enabled = true;
  std::size_t crop_height = 0;  // 0 keeps the full height
  std::size_t crop_width = 0;
  double flip_prob = 0.5;
  double brightness = 0.2;  // factor drawn from [1 - b, 1 + b]
  double contrast = 0.2;    // factor drawn from [1 - c, 1 + c]

  void validate() const;
};

nlohmann::json to_json(const AugmentConfig& cfg);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

struct Sample {
  RgbImage rgb;
  DepthMap sparse;
  DepthMap groundtruth;
};

DepthMap crop(const DepthMap& m, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
RgbImage crop(const RgbImage& m, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
DepthMap hflip(const DepthMap& m);
RgbImage hflip(const RgbImage& m);
/// (v - mean) * contrast + mean, then * brightness, clamped to [0,1].
RgbImage color_jitter(const RgbImage& m, double brightness, double contrast);

/// Same crop window and flip for all three maps; jitter touches rgb only.
Sample augment(const Sample& in, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace dcomp
