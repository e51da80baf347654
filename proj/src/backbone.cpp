// SPDX-License-Identifier: Apache-2.0

#include "dcomp/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "dcomp/rng.hpp"

namespace dcomp {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "elu") return Activation::kElu;
  if (name == "softplus") return Activation::kSoftplus;
  throw std::invalid_argument("unknown activation '" + name + "' (expected relu, elu, softplus)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kElu: return "elu";
    case Activation::kSoftplus: return "softplus";
  }
  return "?";
}

Upsample parse_upsample(const std::string& name) {
  if (name == "nearest") return Upsample::kNearest;
  if (name == "bilinear") return Upsample::kBilinear;
  throw std::invalid_argument("unknown upsample mode '" + name + "' (expected nearest, bilinear)");
}

std::string to_string(Upsample u) { return u == Upsample::kNearest ? "nearest" : "bilinear"; }

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kElu: return elu(x);
    case Activation::kSoftplus: return softplus(x);
  }
  return x;
}

void BackboneConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("backbone: levels must be >= 2");
  if (levels > 8) throw std::invalid_argument("backbone: levels must be <= 8");
  if (base_channels < 8) throw std::invalid_argument("backbone: base_channels must be >= 8");
  if (!(depth_scale > 0.0) || !std::isfinite(depth_scale)) throw std::invalid_argument("backbone: depth_scale must be > 0");
  if (!(init_depth > 0.0) || !std::isfinite(init_depth)) throw std::invalid_argument("backbone: init_depth must be > 0");
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"activation", to_string(c.activation)},
          {"upsample", to_string(c.upsample)},
          {"decouple_branches", c.decouple_branches},
          {"depth_scale", c.depth_scale},
          {"init_depth", c.init_depth},
          {"seed", c.seed}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("backbone config must be a JSON object");
  BackboneConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "levels") c.levels = it->get<std::size_t>();
    else if (k == "base_channels") c.base_channels = it->get<std::size_t>();
    else if (k == "activation") c.activation = parse_activation(it->get<std::string>());
    else if (k == "upsample") c.upsample = parse_upsample(it->get<std::string>());
    else if (k == "decouple_branches") c.decouple_branches = it->get<bool>();
    else if (k == "depth_scale") c.depth_scale = it->get<double>();
    else if (k == "init_depth") c.init_depth = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else throw std::invalid_argument("backbone config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

namespace {

// Kaiming fan-in normal init; `gain` scales the standard deviation.
Tensor kaiming(std::mt19937_64& rng, std::size_t out, std::size_t in, std::size_t k, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(in * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(out * in * k * k);
  for (double& x : v) x = dist(rng);
  return Tensor::from({out, in, k, k}, std::move(v), true);
}

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  color_ = make_branch(5, 1);
  depth_ = make_branch(cfg_.decouple_branches ? 2 : 3, 2);
}

Backbone::Branch Backbone::make_branch(std::size_t in_channels, std::uint64_t salt) const {
  std::mt19937_64 rng(mix_seed({cfg_.seed, 0xbacb, salt}));
  const double gain = cfg_.activation == Activation::kRelu ? std::sqrt(2.0) : 1.0;
  const std::size_t f = cfg_.base_channels;
  auto ch = [f](std::size_t level) { return f << level; };
  Branch b;
  for (std::size_t l = 0; l < cfg_.levels; ++l) {
    const std::size_t in = l == 0 ? in_channels : ch(l - 1);
    b.encoder.push_back({kaiming(rng, ch(l), in, 3, gain), Tensor::zeros({ch(l)}, true), l == 0 ? 1u : 2u});
  }
  for (std::size_t l = 0; l + 1 < cfg_.levels; ++l) {
    const std::size_t in = ch(l + 1) + ch(l);
    b.decoder.push_back({kaiming(rng, ch(l), in, 3, gain), Tensor::zeros({ch(l)}, true), 1});
  }
  // Small head weights keep the untrained output near init_depth with
  // neutral confidence.
  std::vector<double> hb{inverse_softplus(cfg_.init_depth / cfg_.depth_scale), 0.0};
  b.head = {kaiming(rng, 2, f, 1, 0.1), Tensor::from({2}, std::move(hb), true), 1};
  return b;
}

Backbone::BranchOut Backbone::run_branch(const Branch& b, const Tensor& input) const {
  std::vector<Tensor> skips;
  Tensor x = input;
  for (const Conv& c : b.encoder) {
    x = activate(conv2d(x, c.weight, c.bias, c.stride, 1), cfg_.activation);
    skips.push_back(x);
  }
  for (std::size_t l = cfg_.levels - 1; l-- > 0;) {
    const Tensor up = cfg_.upsample == Upsample::kBilinear ? upsample_bilinear2x(x) : upsample_nearest2x(x);
    const Conv& c = b.decoder[l];
    x = activate(conv2d(concat({up, skips[l]}, 1), c.weight, c.bias, 1, 1), cfg_.activation);
  }
  const Tensor head = conv2d(x, b.head.weight, b.head.bias, 1, 0);
  BranchOut out;
  out.depth = mul_scalar(softplus(slice(head, 1, 0, 1)), cfg_.depth_scale);
  out.confidence = slice(head, 1, 1, 1);
  out.features = x;
  return out;
}

BackboneOutput Backbone::forward(const Tensor& rgb, const Tensor& sparse) const {
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw ShapeError("backbone: rgb must be [N,3,H,W], got " + shape_str(rgb.shape()));
  if (sparse.rank() != 4 || sparse.dim(1) != 1) {
    throw ShapeError("backbone: sparse must be [N,1,H,W], got " + shape_str(sparse.shape()));
  }
  if (rgb.dim(0) != sparse.dim(0) || rgb.dim(2) != sparse.dim(2) || rgb.dim(3) != sparse.dim(3)) {
    throw ShapeError("backbone: rgb " + shape_str(rgb.shape()) + " and sparse " + shape_str(sparse.shape()) +
                     " disagree");
  }
  const std::size_t h = rgb.dim(2), w = rgb.dim(3), m = cfg_.size_multiple();
  if (h % m != 0 || w % m != 0) {
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    throw ShapeError("backbone: input " + std::to_string(h) + "x" + std::to_string(w) + " is not a multiple of " +
                     std::to_string(m) + "; pad to " + std::to_string(ph) + "x" + std::to_string(pw) + " (add " +
                     std::to_string(ph - h) + " rows, " + std::to_string(pw - w) + " columns)");
  }
  const Tensor sp = sparse_channels(sparse, cfg_.depth_scale);
  const BranchOut c = run_branch(color_, concat({rgb, sp}, 1));
  const Tensor depth_in =
      cfg_.decouple_branches ? sp : concat({sp, mul_scalar(c.depth, 1.0 / cfg_.depth_scale)}, 1);
  const BranchOut d = run_branch(depth_, depth_in);
  return {c.depth, d.depth, c.confidence, d.confidence, c.features, d.features};
}

Backbone Backbone::detached() const {
  Backbone copy = *this;
  for (Branch* b : {&copy.color_, &copy.depth_}) {
    for (auto* convs : {&b->encoder, &b->decoder}) {
      for (Conv& c : *convs) {
        c.weight = c.weight.detach();
        c.bias = c.bias.detach();
      }
    }
    b->head.weight = b->head.weight.detach();
    b->head.bias = b->head.bias.detach();
  }
  return copy;
}

ParamList Backbone::params() const {
  ParamList out;
  auto add_branch = [&out](const std::string& prefix, const Branch& b) {
    for (std::size_t l = 0; l < b.encoder.size(); ++l) {
      out.push_back({prefix + ".enc" + std::to_string(l) + ".weight", b.encoder[l].weight});
      out.push_back({prefix + ".enc" + std::to_string(l) + ".bias", b.encoder[l].bias});
    }
    for (std::size_t l = 0; l < b.decoder.size(); ++l) {
      out.push_back({prefix + ".dec" + std::to_string(l) + ".weight", b.decoder[l].weight});
      out.push_back({prefix + ".dec" + std::to_string(l) + ".bias", b.decoder[l].bias});
    }
    out.push_back({prefix + ".head.weight", b.head.weight});
    out.push_back({prefix + ".head.bias", b.head.bias});
  };
  add_branch("backbone.color", color_);
  add_branch("backbone.depth", depth_);
  return out;
}

Tensor sparse_channels(const Tensor& sparse, double depth_scale) {
  auto s = sparse.data();
  std::vector<double> mask(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) mask[i] = s[i] > 0.0 ? 1.0 : 0.0;
  return concat({mul_scalar(sparse, 1.0 / depth_scale), Tensor::from(sparse.shape(), std::move(mask))}, 1);
}

Tensor fuse(const Tensor& d_c, const Tensor& d_d, const Tensor& c_c, const Tensor& c_d) {
  const Shape& s = d_c.shape();
  if (d_d.shape() != s || c_c.shape() != s || c_d.shape() != s) {
    throw ShapeError("fuse: all four maps must share shape " + shape_str(s));
  }
  const std::size_t n = d_c.numel();
  auto dc = d_c.data(), dd = d_d.data(), cc = c_c.data(), cd = c_d.data();
  std::vector<double> out(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::max(cc[i], cd[i]);
    const double ec = std::exp(cc[i] - m), ed = std::exp(cd[i] - m);
    // Clamping only absorbs rounding so the blend never leaves its bracket.
    out[i] = std::clamp((dd[i] * ed + dc[i] * ec) / (ed + ec), std::min(dc[i], dd[i]), std::max(dc[i], dd[i]));
    p[i] = ed / (ed + ec);
  }
  return Tensor::make_result(s, std::move(out), {d_c, d_d, c_c, c_d}, [p = std::move(p)](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto dc = ctx.input(0), dd = ctx.input(1);
    if (ctx.wants(0)) {
      auto gi = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * (1.0 - p[i]);
    }
    if (ctx.wants(1)) {
      auto gi = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * p[i];
    }
    for (std::size_t k : {2u, 3u}) {
      if (!ctx.wants(k)) continue;
      auto gi = ctx.grad_in(k);
      const double sign = k == 3 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += sign * g[i] * p[i] * (1.0 - p[i]) * (dd[i] - dc[i]);
    }
  });
}

DepthMap fuse(const DepthMap& d_c, const DepthMap& d_d, const std::vector<double>& c_c,
              const std::vector<double>& c_d) {
  if (d_c.height() != d_d.height() || d_c.width() != d_d.width() || c_c.size() != d_c.size() ||
      c_d.size() != d_c.size()) {
    throw ShapeError("fuse: all four maps must share one size");
  }
  if (!d_c.fully_valid() || !d_d.fully_valid()) throw std::invalid_argument("fuse: branch depths must be fully valid");
  const Shape s{d_c.height(), d_c.width()};
  auto as_tensor = [&s](std::span<const double> v) { return Tensor::from(s, {v.begin(), v.end()}); };
  return tensor_to_depth(fuse(as_tensor(d_c.depths()), as_tensor(d_d.depths()), as_tensor(c_c), as_tensor(c_d)));
}

Tensor rgb_tensor(const RgbImage& rgb) {
  auto p = rgb.planar();
  return Tensor::from({1, 3, rgb.height(), rgb.width()}, {p.begin(), p.end()});
}

Tensor depth_tensor(const DepthMap& map) {
  auto d = map.depths();
  return Tensor::from({1, 1, map.height(), map.width()}, {d.begin(), d.end()});
}

DepthMap tensor_to_depth(const Tensor& t) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) {
    h = t.dim(2);
    w = t.dim(3);
  } else {
    throw ShapeError("tensor_to_depth: expected [H,W] or [1,1,H,W], got " + shape_str(t.shape()));
  }
  auto d = t.data();
  return DepthMap::from_depths(h, w, {d.begin(), d.end()});
}

BackboneOutput backbone_forward(const Backbone& net, const RgbImage& rgb, const DepthMap& sparse) {
  if (rgb.height() != sparse.height() || rgb.width() != sparse.width()) {
    throw ShapeError("backbone_forward: rgb and sparse sizes differ");
  }
  return net.forward(rgb_tensor(rgb), depth_tensor(sparse));
}

}  // namespace dcomp
