// SPDX-License-Identifier: Apache-2.0
//
// Two-branch encoder-decoder producing coarse depth. The color-dominant
// branch sees {rgb, sparse, mask}; the depth-dominant branch sees
// {sparse, mask, D_c} (or just {sparse, mask} when decoupled). Each branch is
// a small U-Net: a stride-1 stem, one stride-2 conv per further level, and a
// decoder of upsample + skip concat + conv. A 1x1 head emits a softplus depth
// and a raw confidence logit; the last decoder activation is the branch's
// guidance feature map.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcomp/checkpoint.hpp"
#include "dcomp/depth_map.hpp"
#include "dcomp/tensor.hpp"

namespace dcomp {

enum class Activation { kRelu, kElu, kSoftplus };
enum class Upsample { kNearest, kBilinear };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
Upsample parse_upsample(const std::string& name);
std::string to_string(Upsample u);

Tensor activate(const Tensor& x, Activation a);

struct BackboneConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 16;
  Activation activation = Activation::kRelu;
  Upsample upsample = Upsample::kBilinear;
  bool decouple_branches = false;
  // Network inputs are divided by this and depth outputs multiplied by it.
  double depth_scale = 20.0;
  // Depth the heads produce before training (bias initialisation).
  double init_depth = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Spatial sizes must be multiples of this.
  std::size_t size_multiple() const { return std::size_t{1} << (levels - 1); }
};

nlohmann::json to_json(const BackboneConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Per-branch maps are [N,1,H,W]; features are [N,F,H,W].
struct BackboneOutput {
  Tensor d_c, d_d;
  Tensor c_c, c_d;
  Tensor z_c, z_d;
};

class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg);

  /// rgb [N,3,H,W] in [0,1]; sparse [N,1,H,W] in meters with 0 = no reading.
  BackboneOutput forward(const Tensor& rgb, const Tensor& sparse) const;

  const BackboneConfig& config() const { return cfg_; }
  ParamList params() const;
  /// Copy whose parameters are constants: forward passes record no graph.
  Backbone detached() const;

 private:
  struct Conv {
    Tensor weight, bias;
    std::size_t stride = 1;
  };
  struct Branch {
    std::vector<Conv> encoder;  // level 0 is the stride-1 stem
    std::vector<Conv> decoder;  // decoder[l] produces level l from level l+1
    Conv head;
  };
  struct BranchOut {
    Tensor depth, confidence, features;
  };

  Branch make_branch(std::size_t in_channels, std::uint64_t salt) const;
  BranchOut run_branch(const Branch& b, const Tensor& input) const;

  BackboneConfig cfg_;
  Branch color_, depth_;
};

/// Network input channels derived from a sparse map: [sparse/scale, mask].
Tensor sparse_channels(const Tensor& sparse, double depth_scale);

/// Confidence fusion: softmax over the two logits, blend the two depths.
Tensor fuse(const Tensor& d_c, const Tensor& d_d, const Tensor& c_c, const Tensor& c_d);

/// Map-level fusion (confidences are raw logits, row-major H*W).
DepthMap fuse(const DepthMap& d_c, const DepthMap& d_d, const std::vector<double>& c_c,
              const std::vector<double>& c_d);

/// Single-frame convenience wrappers.
Tensor rgb_tensor(const RgbImage& rgb);
Tensor depth_tensor(const DepthMap& map);
/// Interprets a [1,1,H,W] (or [H,W]) tensor of positive depths as a dense map.
DepthMap tensor_to_depth(const Tensor& t);

BackboneOutput backbone_forward(const Backbone& net, const RgbImage& rgb, const DepthMap& sparse);

}  // namespace dcomp
