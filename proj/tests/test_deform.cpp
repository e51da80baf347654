// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dcomp/backbone.hpp"
#include "dcomp/deform.hpp"
#include "dcomp/gradcheck.hpp"
#include "dcomp/synth.hpp"
#include "test_util.hpp"

namespace dcomp {
namespace {

// Residual k x k aggregation on the regular grid, clamping neighbour
// coordinates to the map.
std::vector<double> regular_gather(const std::vector<double>& d, std::size_t h, std::size_t w,
                                   const std::vector<double>& wts, std::size_t k) {
  const long r = static_cast<long>(k / 2);
  std::vector<double> out(h * w);
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j) {
      double s = d[i * w + j];
      std::size_t t = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx, ++t) {
          const long y = std::clamp(i + dy, 0L, static_cast<long>(h) - 1);
          const long x = std::clamp(j + dx, 0L, static_cast<long>(w) - 1);
          s += wts[(t * h + i) * w + j] * d[y * w + x];
        }
      out[i * w + j] = s;
    }
  return out;
}

TEST(PredictFields, ConstantHeads) {
  std::mt19937_64 rng(41);
  const RefineHeads heads = RefineHeads::create(6, 3, -1.25);
  const FieldTensors f = predict_fields(test::random_tensor(rng, {1, 6, 5, 7}, -3, 3), heads);
  EXPECT_EQ(f.weights.shape(), (Shape{1, 9, 5, 7}));
  EXPECT_EQ(f.offsets.shape(), (Shape{1, 18, 5, 7}));
  const double s = 1.0 / (1.0 + std::exp(1.25));
  for (double v : f.weights.data()) EXPECT_NEAR(v, s, 1e-15);
  for (double v : f.offsets.data()) EXPECT_EQ(v, 0.0);
}

TEST(PredictFields, ChannelMismatchRejected) {
  const RefineHeads heads = RefineHeads::create(6, 3, 0.0);
  EXPECT_THROW(predict_fields(Tensor::zeros({1, 5, 4, 4}), heads), std::invalid_argument);
}

TEST(PredictFields, HeadGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(42);
  const std::size_t f2 = 8, k = 3;
  const double err = max_gradient_error(
      [](const std::vector<Tensor>& x) {
        RefineHeads h;
        h.in_channels = x[0].dim(1);
        h.k = 3;
        h.weight_w = x[1];
        h.weight_b = x[2];
        h.offset_w = x[3];
        h.offset_b = x[4];
        const FieldTensors f = predict_fields(x[0], h);
        return concat({f.weights, f.offsets}, 1);
      },
      {test::random_tensor(rng, {1, f2, 8, 8}, -1, 1, true), test::random_tensor(rng, {k * k, f2, 1, 1}, -1, 1, true),
       test::random_tensor(rng, {k * k}, -1, 1, true), test::random_tensor(rng, {2 * k * k, f2, 1, 1}, -1, 1, true),
       test::random_tensor(rng, {2 * k * k}, -1, 1, true)},
      1e-5, 3);
  EXPECT_LE(err, 1e-5);
}

TEST(Refine, ZeroOffsetsMatchRegularGather) {
  std::mt19937_64 rng(43);
  for (std::size_t k : {3u, 5u}) {
    for (int t = 0; t < 10; ++t) {
      const std::size_t h = 16, w = 16;
      const auto d = test::random_values(rng, h * w, 0.5, 50.0);
      const auto wt = test::random_values(rng, k * k * h * w, 0.001, 0.999);
      const Tensor out = deform_refine(Tensor::from({1, 1, h, w}, d), Tensor::from({1, k * k, h, w}, wt),
                                       Tensor::zeros({1, 2 * k * k, h, w}), k);
      EXPECT_LE(test::max_abs_diff(out.data(), regular_gather(d, h, w, wt, k)), 1e-12);
    }
  }
}

TEST(Refine, IntegerOffsetsShiftTheTap) {
  // One tap with an integer offset reads exactly the displaced pixel.
  const std::size_t h = 6, w = 6, k = 3;
  std::vector<double> d(h * w);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = 1.0 + static_cast<double>(i);
  std::vector<double> wt(k * k * h * w, 0.0), off(2 * k * k * h * w, 0.0);
  const std::size_t p = 2 * w + 2, tap = 4;  // centre tap at pixel (2,2)
  wt[tap * h * w + p] = 0.5;
  off[(2 * tap) * h * w + p] = 2.0;       // two rows down
  off[(2 * tap + 1) * h * w + p] = -1.0;  // one column left
  const Tensor out =
      deform_refine(Tensor::from({1, 1, h, w}, d), Tensor::from({1, 9, h, w}, wt), Tensor::from({1, 18, h, w}, off), k);
  EXPECT_DOUBLE_EQ(out.data()[p], d[p] + 0.5 * d[4 * w + 1]);
}

TEST(Refine, VanishingWeightsGiveIdentity) {
  std::mt19937_64 rng(44);
  const RefineHeads heads = RefineHeads::create(4, 3, -20.0);
  const Tensor coarse = test::random_tensor(rng, {1, 1, 12, 12}, 1.0, 60.0);
  const Tensor out = refine_module_forward(coarse, test::random_tensor(rng, {1, 4, 12, 12}, -2, 2), heads);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_LE(std::abs(out.data()[i] - coarse.data()[i]), 1e-6 * coarse.data()[i]);
  }
}

// Fresh heads on real backbone features for synthetic coarse maps. Offsets
// start at zero, so the output is the regular gather with constant weight
// sigmoid(bias): the default bias adds between k^2 w min and k^2 w max of
// the neighbourhood. Depth ratios inside a neighbourhood reach about 10 on
// these scenes, so staying within 5% needs k^2 w = 0.005.
TEST(Refine, NearIdentityInitialisation) {
  const Backbone net(BackboneConfig{});
  for (std::size_t k : {3u, 5u}) {
    const double w_default = 1.0 / (1.0 + std::exp(-kInitialWeightBias));
    const RefineHeads standard = RefineHeads::create(32, k, kInitialWeightBias);
    const RefineHeads small = RefineHeads::create(32, k, weight_bias_for_total(k, 0.005));
    for (std::uint64_t s = 0; s < 3; ++s) {
      const SceneRender scene = synth_scene(SceneConfig{}, s);
      const BackboneOutput o = backbone_forward(net, scene.rgb, sparsify(scene.depth, 0.05, s));
      const Tensor coarse = depth_tensor(scene.depth);
      const Tensor z = concat({o.z_d, o.z_c}, 1);
      const Tensor out = refine_module_forward(coarse, z, standard);
      const Tensor near = refine_module_forward(coarse, z, small);
      const double lo = *std::min_element(coarse.data().begin(), coarse.data().end());
      const double hi = *std::max_element(coarse.data().begin(), coarse.data().end());
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const double r = out.data()[i] - coarse.data()[i];
        EXPECT_GE(r, k * k * w_default * lo * (1 - 1e-12));
        EXPECT_LE(r, k * k * w_default * hi * (1 + 1e-12));
        EXPECT_LE(std::abs(near.data()[i] - coarse.data()[i]), 0.05 * coarse.data()[i]);
      }
    }
  }
}

TEST(Refine, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(45);
  const std::size_t n = 10, k = 3;
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int which = 0; which < 3; ++which) {
    std::vector<double> off(2 * k * k * n * n);
    for (double& x : off) {
      do x = u(rng);
      while (std::abs(x - std::round(x)) < 0.01);
    }
    const double err = max_gradient_error(
        [](const std::vector<Tensor>& x) { return mean(deform_refine(x[0], x[1], x[2], 3)); },
        {test::random_tensor(rng, {1, 1, n, n}, 0.5, 3.0, which == 0),
         test::random_tensor(rng, {1, k * k, n, n}, 0.01, 0.99, which == 1),
         Tensor::from({1, 2 * k * k, n, n}, off, which == 2)},
        1e-5, rng());
    EXPECT_LE(err, 1e-4) << "input " << which;
  }
}

TEST(Refine, LocalityBound) {
  std::mt19937_64 rng(46);
  const std::size_t h = 24, w = 24, k = 3;
  const double m = 1.7;
  const auto d = test::random_values(rng, h * w, 1.0, 10.0);
  const Tensor wt = test::random_tensor(rng, {1, k * k, h, w}, 0.01, 0.99);
  const Tensor off = test::random_tensor(rng, {1, 2 * k * k, h, w}, -m, m);
  const Tensor base = deform_refine(Tensor::from({1, 1, h, w}, d), wt, off, k);
  const long half = static_cast<long>((k + 1) / 2) + static_cast<long>(std::ceil(m)) + 1;
  for (std::size_t p : {0ul, 5ul * w + 7, 12ul * w + 12, h * w - 1}) {
    auto d2 = d;
    d2[p] += 3.0;
    const Tensor changed = deform_refine(Tensor::from({1, 1, h, w}, d2), wt, off, k);
    const long pr = static_cast<long>(p / w), pc = static_cast<long>(p % w);
    for (std::size_t q = 0; q < h * w; ++q) {
      if (changed.data()[q] == base.data()[q]) continue;
      EXPECT_LE(std::abs(static_cast<long>(q / w) - pr), half);
      EXPECT_LE(std::abs(static_cast<long>(q % w) - pc), half);
    }
  }
}

TEST(Refine, ResidualBounds) {
  std::mt19937_64 rng(47);
  const std::size_t h = 12, w = 12, k = 3;
  for (int t = 0; t < 20; ++t) {
    const Tensor c = test::random_tensor(rng, {1, 1, h, w}, 0.5, 40.0);
    const Tensor out = deform_refine(c, test::random_tensor(rng, {1, k * k, h, w}, 1e-6, 1.0 - 1e-6),
                                     test::random_tensor(rng, {1, 2 * k * k, h, w}, -4, 4), k);
    const double mx = *std::max_element(c.data().begin(), c.data().end());
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double r = out.data()[i] - c.data()[i];
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, k * k * mx);
    }
  }
}

TEST(Refine, MeanSubtractedWeightsSumToZero) {
  // Centred weights leave a constant map unchanged whatever the offsets.
  std::mt19937_64 rng(48);
  const std::size_t h = 8, w = 8, k = 3;
  const Tensor c = Tensor::full({1, 1, h, w}, 7.5);
  const Tensor out = deform_refine(c, test::random_tensor(rng, {1, k * k, h, w}, 0.01, 0.99),
                                   test::random_tensor(rng, {1, 2 * k * k, h, w}, -3, 3), k, true);
  for (double v : out.data()) EXPECT_NEAR(v, 7.5, 1e-12);
}

TEST(Refine, MapAndTensorFormsAgree) {
  std::mt19937_64 rng(49);
  const std::size_t h = 9, w = 11, k = 3;
  const Tensor c = test::random_tensor(rng, {1, 1, h, w}, 1.0, 20.0);
  const Tensor wt = test::random_tensor(rng, {1, k * k, h, w}, 0.01, 0.99);
  const Tensor off = test::random_tensor(rng, {1, 2 * k * k, h, w}, -2, 2);
  const Tensor t = deform_refine(c, wt, off, k);
  const DepthMap m = refine(tensor_to_depth(c), to_kernel_field(wt), to_offset_field(off), k);
  EXPECT_EQ(test::max_abs_diff(m.depths(), t.data()), 0.0);
}

TEST(Refine, Rejections) {
  const Tensor c = Tensor::full({1, 1, 4, 4}, 1.0);
  EXPECT_THROW(deform_refine(c, Tensor::full({1, 4, 4, 4}, 0.5), Tensor::zeros({1, 8, 4, 4}), 2),
               std::invalid_argument);
  EXPECT_THROW(deform_refine(c, Tensor::full({1, 9, 4, 4}, 0.5), Tensor::zeros({1, 16, 4, 4}), 3),
               std::invalid_argument);
  KernelField kf{4, 4, 3, std::vector<double>(9 * 16, 0.5)};
  OffsetField of{4, 4, 3, std::vector<double>(18 * 16, 0.0)};
  DepthMap hole = tensor_to_depth(c);
  hole.invalidate(1, 1);
  EXPECT_THROW(refine(hole, kf, of, 3), std::invalid_argument);
  kf.values[0] = 1.0;  // weights live in the open interval
  EXPECT_THROW(refine(tensor_to_depth(c), kf, of, 3), std::invalid_argument);
  EXPECT_THROW(require_odd_kernel(4), std::invalid_argument);
}

TEST(Refine, Deterministic) {
  std::mt19937_64 rng(50);
  const RefineHeads heads = RefineHeads::create(4, 3, 0.3);
  const Tensor c = test::random_tensor(rng, {1, 1, 8, 8}, 1, 5), z = test::random_tensor(rng, {1, 4, 8, 8}, -1, 1);
  const Tensor a = refine_module_forward(c, z, heads), b = refine_module_forward(c, z, heads);
  EXPECT_EQ(a.shape(), c.shape());
  EXPECT_EQ(test::max_abs_diff(a.data(), b.data()), 0.0);
}

}  // namespace
}  // namespace dcomp
