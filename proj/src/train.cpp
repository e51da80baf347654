// SPDX-License-Identifier: Apache-2.0

#include "dcomp/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dcomp/rng.hpp"

namespace dcomp {

namespace {

template <typename T>
T get_key(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("loss: alpha must be in [0,1]");
  if (!(aux_coarse_weight >= 0.0)) throw std::invalid_argument("loss: aux_coarse_weight must be >= 0");
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha},
          {"reduction", c.reduction == Reduction::kMean ? "mean" : "sum"},
          {"aux_coarse_weight", c.aux_coarse_weight}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"alpha", "reduction", "aux_coarse_weight"}, "loss");
  LossConfig c;
  c.alpha = get_key(j, "alpha", c.alpha);
  const std::string red = get_key<std::string>(j, "reduction", "mean");
  if (red == "mean") c.reduction = Reduction::kMean;
  else if (red == "sum") c.reduction = Reduction::kSum;
  else throw std::invalid_argument("loss: reduction must be 'mean' or 'sum'");
  c.aux_coarse_weight = get_key(j, "aux_coarse_weight", c.aux_coarse_weight);
  c.validate();
  return c;
}

Tensor masked_loss(const Tensor& prediction, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  if (prediction.shape() != target.shape()) {
    throw ShapeError("masked_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  auto d = prediction.data(), y = target.data();
  std::size_t n = 0;
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(y[i] > 0.0)) continue;
    const double e = d[i] - y[i];
    sq += e * e;
    ab += std::abs(e);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("masked_loss: target has no valid pixels");
  const double norm = cfg.reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;
  const double alpha = cfg.alpha;
  const double value = norm * (alpha * sq + (1.0 - alpha) * ab);
  return Tensor::make_result({}, {value}, {prediction, target}, [norm, alpha](BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const double g = ctx.grad_out()[0];
    auto d = ctx.input(0), y = ctx.input(1);
    auto gd = ctx.grad_in(0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(y[i] > 0.0)) continue;
      const double e = d[i] - y[i];
      const double sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      gd[i] += g * norm * (2.0 * alpha * e + (1.0 - alpha) * sign);
    }
  });
}

double masked_loss(const DepthMap& prediction, const DepthMap& target, const LossConfig& cfg) {
  if (prediction.height() != target.height() || prediction.width() != target.width()) {
    throw ShapeError("masked_loss: prediction and target sizes differ");
  }
  const Shape s{prediction.height(), prediction.width()};
  auto p = prediction.depths(), t = target.depths();
  return masked_loss(Tensor::from(s, {p.begin(), p.end()}), Tensor::from(s, {t.begin(), t.end()}), cfg).item();
}

// ---------------------------------------------------------------------------

void OptimConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optim: lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("optim: beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("optim: beta2 must be in (0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optim: weight_decay must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("optim: eps must be > 0");
  if (epochs == 0) throw std::invalid_argument("optim: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("optim: batch_size must be >= 1");
  if (schedule.type == Schedule::Type::kStaircase) {
    if (schedule.milestones.size() != schedule.factors.size()) {
      throw std::invalid_argument("optim: staircase milestones and factors differ in length");
    }
    for (std::size_t i = 1; i < schedule.milestones.size(); ++i) {
      if (schedule.milestones[i] <= schedule.milestones[i - 1]) {
        throw std::invalid_argument("optim: staircase milestones must be strictly increasing");
      }
    }
    for (double f : schedule.factors) {
      if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("optim: staircase factors must be in (0,1]");
    }
  }
}

nlohmann::json to_json(const OptimConfig& c) {
  nlohmann::json s;
  switch (c.schedule.type) {
    case Schedule::Type::kCosine: s = {{"type", "cosine"}}; break;
    case Schedule::Type::kConstant: s = {{"type", "constant"}}; break;
    case Schedule::Type::kStaircase:
      s = {{"type", "staircase"}, {"milestones", c.schedule.milestones}, {"factors", c.schedule.factors}};
      break;
  }
  return {{"lr", c.lr},         {"beta1", c.beta1},           {"beta2", c.beta2},
          {"weight_decay", c.weight_decay}, {"eps", c.eps}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"schedule", s}};
}

OptimConfig optim_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"lr", "beta1", "beta2", "weight_decay", "eps", "epochs", "batch_size", "schedule"}, "optim");
  OptimConfig c;
  c.lr = get_key(j, "lr", c.lr);
  c.beta1 = get_key(j, "beta1", c.beta1);
  c.beta2 = get_key(j, "beta2", c.beta2);
  c.weight_decay = get_key(j, "weight_decay", c.weight_decay);
  c.eps = get_key(j, "eps", c.eps);
  c.epochs = get_key(j, "epochs", c.epochs);
  c.batch_size = get_key(j, "batch_size", c.batch_size);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s, {"type", "milestones", "factors"}, "optim.schedule");
    const std::string type = get_key<std::string>(s, "type", "cosine");
    if (type == "cosine") c.schedule.type = Schedule::Type::kCosine;
    else if (type == "constant") c.schedule.type = Schedule::Type::kConstant;
    else if (type == "staircase") {
      c.schedule.type = Schedule::Type::kStaircase;
      c.schedule.milestones = get_key(s, "milestones", std::vector<std::size_t>{10, 15, 25});
      c.schedule.factors = get_key(s, "factors", std::vector<double>{0.5, 0.2, 0.1});
    } else {
      throw std::invalid_argument("optim.schedule: type must be cosine, staircase or constant");
    }
  }
  c.validate();
  return c;
}

double lr_at(const OptimConfig& cfg, std::size_t epoch) {
  if (epoch >= cfg.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                            ")");
  }
  switch (cfg.schedule.type) {
    case Schedule::Type::kConstant: return cfg.lr;
    case Schedule::Type::kCosine:
      return cfg.lr * 0.5 *
             (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
    case Schedule::Type::kStaircase: {
      double lr = cfg.lr;
      for (std::size_t i = 0; i < cfg.schedule.milestones.size(); ++i) {
        if (cfg.schedule.milestones[i] <= epoch) lr *= cfg.schedule.factors[i];
      }
      return lr;
    }
  }
  return cfg.lr;
}

Adam::Adam(ParamList params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    if (!p.tensor.is_leaf()) throw std::invalid_argument("Adam: parameter '" + p.name + "' is not a leaf");
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        std::ostringstream msg;
        msg << "non-finite gradient " << g[i] << " in parameter '" << p.name << "' at index " << i << " (step "
            << t_ + 1 << ")";
        throw NonFiniteGradient(msg.str());
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    auto x = p.mutable_data();
    const bool has = p.has_grad();
    auto g = has ? p.grad() : std::span<const double>{};
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = (has ? g[i] : 0.0) + cfg_.weight_decay * x[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------

void AugmentConfig::validate() const {
  if ((crop_height == 0) != (crop_width == 0)) throw std::invalid_argument("augment: give both crop sizes or neither");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("augment: flip_prob must be in [0,1]");
  if (!(brightness >= 0.0 && brightness < 1.0)) throw std::invalid_argument("augment: brightness must be in [0,1)");
  if (!(contrast >= 0.0 && contrast < 1.0)) throw std::invalid_argument("augment: contrast must be in [0,1)");
}

nlohmann::json to_json(const AugmentConfig& c) {
  return {{"enabled", c.enabled},       {"crop", {c.crop_height, c.crop_width}}, {"flip_prob", c.flip_prob},
          {"brightness", c.brightness}, {"contrast", c.contrast}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"enabled", "crop", "flip_prob", "brightness", "contrast"}, "augment");
  AugmentConfig c;
  c.enabled = get_key(j, "enabled", c.enabled);
  if (j.contains("crop")) {
    const auto crop = j.at("crop").get<std::vector<std::size_t>>();
    if (crop.size() != 2) throw std::invalid_argument("augment: crop must be [height, width]");
    c.crop_height = crop[0];
    c.crop_width = crop[1];
  }
  c.flip_prob = get_key(j, "flip_prob", c.flip_prob);
  c.brightness = get_key(j, "brightness", c.brightness);
  c.contrast = get_key(j, "contrast", c.contrast);
  c.validate();
  return c;
}

namespace {

void check_window(std::size_t h, std::size_t w, std::size_t top, std::size_t left, std::size_t ch, std::size_t cw) {
  if (ch == 0 || cw == 0 || top + ch > h || left + cw > w) {
    throw std::invalid_argument("crop: window " + std::to_string(ch) + "x" + std::to_string(cw) + " at (" +
                                std::to_string(top) + "," + std::to_string(left) + ") exceeds image " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

DepthMap crop(const DepthMap& m, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  check_window(m.height(), m.width(), top, left, height, width);
  std::vector<double> d(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) d[r * width + c] = m.depth(top + r, left + c);
  }
  return DepthMap::from_depths(height, width, std::move(d));
}

RgbImage crop(const RgbImage& m, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  check_window(m.height(), m.width(), top, left, height, width);
  std::vector<double> d(3 * height * width);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) d[(ch * height + r) * width + c] = m.at(ch, top + r, left + c);
    }
  }
  return RgbImage::from_planar(height, width, std::move(d));
}

DepthMap hflip(const DepthMap& m) {
  std::vector<double> d(m.size());
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) d[r * m.width() + c] = m.depth(r, m.width() - 1 - c);
  }
  return DepthMap::from_depths(m.height(), m.width(), std::move(d));
}

RgbImage hflip(const RgbImage& m) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<double> d(3 * h * w);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) d[(ch * h + r) * w + c] = m.at(ch, r, w - 1 - c);
    }
  }
  return RgbImage::from_planar(h, w, std::move(d));
}

RgbImage color_jitter(const RgbImage& m, double brightness, double contrast) {
  auto p = m.planar();
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(p.size(), 1));
  std::vector<double> d(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) d[i] = std::clamp(((p[i] - mean) * contrast + mean) * brightness, 0.0, 1.0);
  return RgbImage::from_planar(m.height(), m.width(), std::move(d));
}

Sample augment(const Sample& in, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t h = in.sparse.height(), w = in.sparse.width();
  if (in.rgb.height() != h || in.rgb.width() != w || in.groundtruth.height() != h || in.groundtruth.width() != w) {
    throw std::invalid_argument("augment: rgb, sparse and groundtruth sizes differ");
  }
  if (cfg.crop_height > h || cfg.crop_width > w) {
    throw std::invalid_argument("augment: crop " + std::to_string(cfg.crop_height) + "x" +
                                std::to_string(cfg.crop_width) + " larger than image " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  if (!cfg.enabled) return in;
  std::mt19937_64 rng(mix_seed({seed, 0xa09}));
  Sample out = in;
  if (cfg.crop_height > 0) {
    const std::size_t top = std::uniform_int_distribution<std::size_t>(0, h - cfg.crop_height)(rng);
    const std::size_t left = std::uniform_int_distribution<std::size_t>(0, w - cfg.crop_width)(rng);
    out.rgb = crop(out.rgb, top, left, cfg.crop_height, cfg.crop_width);
    out.sparse = crop(out.sparse, top, left, cfg.crop_height, cfg.crop_width);
    out.groundtruth = crop(out.groundtruth, top, left, cfg.crop_height, cfg.crop_width);
  }
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_prob) {
    out.rgb = hflip(out.rgb);
    out.sparse = hflip(out.sparse);
    out.groundtruth = hflip(out.groundtruth);
  }
  const double b = std::uniform_real_distribution<double>(1.0 - cfg.brightness, 1.0 + cfg.brightness)(rng);
  const double c = std::uniform_real_distribution<double>(1.0 - cfg.contrast, 1.0 + cfg.contrast)(rng);
  out.rgb = color_jitter(out.rgb, b, c);
  return out;
}

}  // namespace dcomp
