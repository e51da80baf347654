// SPDX-License-Identifier: Apache-2.0

#include "dcomp/deform.hpp"

#include <cmath>
#include <stdexcept>

#include "dcomp/backbone.hpp"

namespace dcomp {

double weight_bias_for_total(std::size_t k, double total) {
  require_odd_kernel(k);
  const double w = total / static_cast<double>(k * k);
  if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("weight_bias_for_total: per-tap weight must be in (0,1)");
  return std::log(w / (1.0 - w));
}

void require_odd_kernel(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("refine: kernel size k must be odd, got " + std::to_string(k));
}

RefineHeads RefineHeads::create(std::size_t in_channels, std::size_t k, double weight_bias) {
  require_odd_kernel(k);
  RefineHeads h;
  h.in_channels = in_channels;
  h.k = k;
  const std::size_t kk = k * k;
  h.weight_w = Tensor::zeros({kk, in_channels, 1, 1}, true);
  h.weight_b = Tensor::full({kk}, weight_bias, true);
  h.offset_w = Tensor::zeros({2 * kk, in_channels, 1, 1}, true);
  h.offset_b = Tensor::zeros({2 * kk}, true);
  return h;
}

ParamList RefineHeads::params(const std::string& prefix) const {
  return {{prefix + ".weight_head.weight", weight_w},
          {prefix + ".weight_head.bias", weight_b},
          {prefix + ".offset_head.weight", offset_w},
          {prefix + ".offset_head.bias", offset_b}};
}

FieldTensors predict_fields(const Tensor& z, const RefineHeads& heads) {
  if (z.rank() != 4 || z.dim(1) != heads.in_channels) {
    throw ShapeError("predict_fields: heads expect [N," + std::to_string(heads.in_channels) + ",H,W] features, got " +
                     shape_str(z.shape()));
  }
  return {sigmoid(conv2d(z, heads.weight_w, heads.weight_b, 1, 0)), conv2d(z, heads.offset_w, heads.offset_b, 1, 0)};
}

Tensor deform_refine(const Tensor& coarse, const Tensor& weights, const Tensor& offsets, std::size_t k,
                     bool subtract_mean_weights) {
  require_odd_kernel(k);
  if (coarse.rank() != 4 || coarse.dim(1) != 1) {
    throw ShapeError("deform_refine: coarse must be [N,1,H,W], got " + shape_str(coarse.shape()));
  }
  const std::size_t n = coarse.dim(0), h = coarse.dim(2), w = coarse.dim(3), kk = k * k, hw = h * w;
  if (weights.shape() != Shape{n, kk, h, w}) {
    throw ShapeError("deform_refine: weights must be " + shape_str({n, kk, h, w}) + ", got " +
                     shape_str(weights.shape()));
  }
  if (offsets.shape() != Shape{n, 2 * kk, h, w}) {
    throw ShapeError("deform_refine: offsets must be " + shape_str({n, 2 * kk, h, w}) + ", got " +
                     shape_str(offsets.shape()));
  }
  const long r = static_cast<long>(k / 2);
  auto pos_of = [r, k](std::size_t t, std::size_t i, std::size_t j, double dx, double dy) {
    const long ty = static_cast<long>(t / k) - r, tx = static_cast<long>(t % k) - r;
    return std::pair{static_cast<double>(static_cast<long>(i) + ty) + dx,
                     static_cast<double>(static_cast<long>(j) + tx) + dy};
  };
  auto eff_weights = [kk, hw, subtract_mean_weights](std::span<const double> wv, std::size_t b, std::size_t p,
                                                     double* out) {
    double m = 0.0;
    for (std::size_t t = 0; t < kk; ++t) {
      out[t] = wv[(b * kk + t) * hw + p];
      m += out[t];
    }
    if (subtract_mean_weights) {
      m /= static_cast<double>(kk);
      for (std::size_t t = 0; t < kk; ++t) out[t] -= m;
    }
  };

  auto cd = coarse.data(), wd = weights.data(), od = offsets.data();
  for (double v : od) {
    if (!std::isfinite(v)) throw std::invalid_argument("deform_refine: non-finite offset");
  }
  std::vector<double> out(n * hw);
  std::vector<double> we(kk);
  for (std::size_t b = 0; b < n; ++b) {
    const std::span<const double> map = cd.subspan(b * hw, hw);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        eff_weights(wd, b, p, we.data());
        double acc = 0.0;
        for (std::size_t t = 0; t < kk; ++t) {
          const auto [x, y] = pos_of(t, i, j, od[(b * 2 * kk + 2 * t) * hw + p], od[(b * 2 * kk + 2 * t + 1) * hw + p]);
          acc += we[t] * bilinear_sample(map, h, w, x, y);
        }
        out[b * hw + p] = map[p] + acc;
      }
    }
  }

  return Tensor::make_result(
      coarse.shape(), std::move(out), {coarse, weights, offsets},
      [=](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto cd = ctx.input(0), wd = ctx.input(1), od = ctx.input(2);
        std::span<double> gc = ctx.wants(0) ? ctx.grad_in(0) : std::span<double>{};
        std::span<double> gw = ctx.wants(1) ? ctx.grad_in(1) : std::span<double>{};
        std::span<double> go = ctx.wants(2) ? ctx.grad_in(2) : std::span<double>{};
        std::vector<double> we(kk), gwe(kk);
        for (std::size_t b = 0; b < n; ++b) {
          const std::span<const double> map = cd.subspan(b * hw, hw);
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t p = i * w + j;
              const double gp = g[b * hw + p];
              if (gp == 0.0) continue;
              eff_weights(wd, b, p, we.data());
              if (!gc.empty()) gc[b * hw + p] += gp;
              for (std::size_t t = 0; t < kk; ++t) {
                const std::size_t ox = (b * 2 * kk + 2 * t) * hw + p, oy = ox + hw;
                const auto [x, y] = pos_of(t, i, j, od[ox], od[oy]);
                double d[2];
                const double v = bilinear_sample(map, h, w, x, y, d);
                gwe[t] = gp * v;
                if (!go.empty()) {
                  go[ox] += gp * we[t] * d[0];
                  go[oy] += gp * we[t] * d[1];
                }
                if (!gc.empty()) {
                  const BilinearTaps taps = bilinear_taps(h, w, x, y);
                  for (int c = 0; c < 4; ++c) gc[b * hw + taps.index[c]] += gp * we[t] * taps.weight[c];
                }
              }
              if (!gw.empty()) {
                double m = 0.0;
                if (subtract_mean_weights) {
                  for (std::size_t t = 0; t < kk; ++t) m += gwe[t];
                  m /= static_cast<double>(kk);
                }
                for (std::size_t t = 0; t < kk; ++t) gw[(b * kk + t) * hw + p] += gwe[t] - m;
              }
            }
          }
        }
      });
}

namespace {

Tensor field_tensor(std::size_t h, std::size_t w, std::size_t channels, const std::vector<double>& v,
                    const char* what) {
  if (v.size() != channels * h * w) {
    throw ShapeError(std::string("refine: ") + what + " field holds " + std::to_string(v.size()) + " values, expected " +
                     std::to_string(channels * h * w));
  }
  return Tensor::from({1, channels, h, w}, v);
}

}  // namespace

DepthMap refine(const DepthMap& coarse, const KernelField& weights, const OffsetField& offsets, std::size_t k,
                bool subtract_mean_weights) {
  require_odd_kernel(k);
  if (!coarse.fully_valid()) throw std::invalid_argument("refine: coarse depth must be fully valid");
  const std::size_t h = coarse.height(), w = coarse.width();
  if (weights.k != k || offsets.k != k || weights.height != h || weights.width != w || offsets.height != h ||
      offsets.width != w) {
    throw ShapeError("refine: field sizes do not match the coarse map and k");
  }
  for (double v : weights.values) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("refine: kernel weights must lie in (0,1)");
  }
  const Tensor out = deform_refine(depth_tensor(coarse), field_tensor(h, w, k * k, weights.values, "kernel"),
                                   field_tensor(h, w, 2 * k * k, offsets.values, "offset"), k, subtract_mean_weights);
  std::vector<double> d(out.data().begin(), out.data().end());
  for (double& v : d) {
    if (!(v > 0.0)) v = 0.0;
  }
  return DepthMap::from_depths(h, w, std::move(d));
}

Tensor refine_module_forward(const Tensor& coarse, const Tensor& z, const RefineHeads& heads,
                             bool subtract_mean_weights) {
  const FieldTensors f = predict_fields(z, heads);
  return deform_refine(coarse, f.weights, f.offsets, heads.k, subtract_mean_weights);
}

DepthMap refine_module_forward(const DepthMap& coarse, const Tensor& z, const RefineHeads& heads,
                               bool subtract_mean_weights) {
  if (!coarse.fully_valid()) throw std::invalid_argument("refine: coarse depth must be fully valid");
  const FieldTensors f = predict_fields(z, heads);
  const Tensor out = deform_refine(depth_tensor(coarse), f.weights, f.offsets, heads.k, subtract_mean_weights);
  std::vector<double> d(out.data().begin(), out.data().end());
  for (double& v : d) {
    if (!(v > 0.0)) v = 0.0;
  }
  return DepthMap::from_depths(coarse.height(), coarse.width(), std::move(d));
}

KernelField to_kernel_field(const Tensor& weights) {
  if (weights.rank() != 4 || weights.dim(0) != 1) throw ShapeError("to_kernel_field: expected [1,k^2,H,W]");
  const std::size_t k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(weights.dim(1)))));
  if (k * k != weights.dim(1)) throw ShapeError("to_kernel_field: channel count is not a square");
  return {weights.dim(2), weights.dim(3), k, {weights.data().begin(), weights.data().end()}};
}

OffsetField to_offset_field(const Tensor& offsets) {
  if (offsets.rank() != 4 || offsets.dim(0) != 1 || offsets.dim(1) % 2 != 0) {
    throw ShapeError("to_offset_field: expected [1,2k^2,H,W]");
  }
  const std::size_t kk = offsets.dim(1) / 2;
  const std::size_t k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(kk))));
  if (k * k != kk) throw ShapeError("to_offset_field: channel count is not twice a square");
  return {offsets.dim(2), offsets.dim(3), k, {offsets.data().begin(), offsets.data().end()}};
}

}  // namespace dcomp
