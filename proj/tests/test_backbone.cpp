// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcomp/backbone.hpp"
#include "dcomp/gradcheck.hpp"
#include "dcomp/synth.hpp"
#include "test_util.hpp"

namespace dcomp {
namespace {

struct Inputs {
  Tensor rgb, sparse;
};

Inputs random_inputs(std::mt19937_64& rng, std::size_t n, std::size_t h, std::size_t w) {
  std::vector<double> sp(n * h * w, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0), d(2.0, 40.0);
  for (double& v : sp)
    if (u(rng) < 0.1) v = d(rng);
  return {test::random_tensor(rng, {n, 3, h, w}, 0.0, 1.0), Tensor::from({n, 1, h, w}, sp)};
}

TEST(Backbone, OutputShapes) {
  std::mt19937_64 rng(31);
  BackboneConfig cfg;
  cfg.seed = 3;
  const Backbone net(cfg);
  const Inputs in = random_inputs(rng, 2, 16, 24);
  const BackboneOutput o = net.forward(in.rgb, in.sparse);
  for (const Tensor* t : {&o.d_c, &o.d_d, &o.c_c, &o.c_d}) EXPECT_EQ(t->shape(), (Shape{2, 1, 16, 24}));
  EXPECT_EQ(o.z_c.shape(), (Shape{2, cfg.base_channels, 16, 24}));
  EXPECT_EQ(o.z_d.shape(), (Shape{2, cfg.base_channels, 16, 24}));
  for (double v : o.d_c.data()) EXPECT_GT(v, 0.0);
  for (double v : o.d_d.data()) EXPECT_GT(v, 0.0);
}

TEST(Backbone, Deterministic) {
  std::mt19937_64 rng(32);
  BackboneConfig cfg;
  cfg.seed = 9;
  const Inputs in = random_inputs(rng, 1, 16, 16);
  const BackboneOutput a = Backbone(cfg).forward(in.rgb, in.sparse);
  const BackboneOutput b = Backbone(cfg).forward(in.rgb, in.sparse);
  EXPECT_EQ(test::max_abs_diff(a.d_c.data(), b.d_c.data()), 0.0);
  EXPECT_EQ(test::max_abs_diff(a.z_d.data(), b.z_d.data()), 0.0);
  cfg.seed = 10;
  const BackboneOutput c = Backbone(cfg).forward(in.rgb, in.sparse);
  EXPECT_GT(test::max_abs_diff(a.d_c.data(), c.d_c.data()), 0.0);
}

TEST(Backbone, IndivisibleSizeNamesPadding) {
  std::mt19937_64 rng(33);
  const Backbone net(BackboneConfig{});
  const Inputs in = random_inputs(rng, 1, 18, 16);
  try {
    net.forward(in.rgb, in.sparse);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos) << e.what();
  }
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig c;
  c.levels = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.base_channels = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(backbone_config_from_json({{"levels", 3}, {"bogus", 1}}), std::invalid_argument);
  const BackboneConfig d = backbone_config_from_json(to_json(BackboneConfig{}));
  EXPECT_EQ(to_json(d), to_json(BackboneConfig{}));
}

TEST(Backbone, DecoupledBranchIgnoresColourDepth) {
  std::mt19937_64 rng(34);
  BackboneConfig cfg;
  cfg.decouple_branches = true;
  const Backbone net(cfg);
  Inputs in = random_inputs(rng, 1, 16, 16);
  const BackboneOutput a = net.forward(in.rgb, in.sparse);
  const BackboneOutput b = net.forward(test::random_tensor(rng, {1, 3, 16, 16}, 0, 1), in.sparse);
  EXPECT_EQ(test::max_abs_diff(a.d_d.data(), b.d_d.data()), 0.0);
  EXPECT_GT(test::max_abs_diff(a.d_c.data(), b.d_c.data()), 0.0);
}

// Central differences on every parameter tensor, sampling a few entries per
// tensor to keep the runtime reasonable. ELU keeps the network smooth.
TEST(Backbone, ParameterGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(35);
  BackboneConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 8;
  cfg.activation = Activation::kElu;
  cfg.seed = 4;
  const Backbone net(cfg);
  const Inputs in = random_inputs(rng, 1, 16, 16);
  auto objective = [&] {
    const BackboneOutput o = net.forward(in.rgb, in.sparse);
    return mean(add(o.d_c, o.d_d));
  };
  ParamList params = net.params();
  for (auto& p : params) p.tensor.zero_grad();
  objective().backward();
  std::size_t checked = 0;
  for (auto& p : params) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double norm = 0.0;
    for (double g : p.tensor.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << p.name << " receives no gradient";
    const std::vector<double> grad(p.tensor.grad().begin(), p.tensor.grad().end());
    auto data = p.tensor.mutable_data();
    for (int s = 0; s < 3; ++s) {
      const std::size_t i = rng() % data.size();
      const double x0 = data[i], h = 1e-5;
      data[i] = x0 + h;
      const double fp = objective().item();
      data[i] = x0 - h;
      const double fm = objective().item();
      data[i] = x0;
      const double num = (fp - fm) / (2 * h);
      EXPECT_LE(relative_error(grad[i], num), 1e-4) << p.name << "[" << i << "] " << grad[i] << " vs " << num;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20u);
}

TEST(Fuse, EqualConfidenceAverages) {
  const Tensor d = fuse(Tensor::full({1, 1, 2, 2}, 2.0), Tensor::full({1, 1, 2, 2}, 4.0), Tensor::full({1, 1, 2, 2}, 0.7),
                        Tensor::full({1, 1, 2, 2}, 0.7));
  for (double v : d.data()) EXPECT_EQ(v, 3.0);
}

TEST(Fuse, AnalyticExample) {
  const Tensor d = fuse(Tensor::from({1}, {2.0}), Tensor::from({1}, {4.0}), Tensor::from({1}, {0.0}),
                        Tensor::from({1}, {std::log(3.0)}));
  EXPECT_NEAR(d.data()[0], 3.5, 1e-15);
}

TEST(Fuse, Saturation) {
  const double dc = 7.0, dd = 19.0;
  const Tensor d = fuse(Tensor::from({1}, {dc}), Tensor::from({1}, {dd}), Tensor::from({1}, {-3.0}),
                        Tensor::from({1}, {17.0}));
  EXPECT_LE(std::abs(d.data()[0] - dd), 1e-7 * std::abs(dd - dc));
  // Extreme logits stay finite.
  const Tensor e = fuse(Tensor::from({1}, {dc}), Tensor::from({1}, {dd}), Tensor::from({1}, {-800.0}),
                        Tensor::from({1}, {800.0}));
  EXPECT_EQ(e.data()[0], dd);
}

TEST(Fuse, Invariants) {
  std::mt19937_64 rng(36);
  std::uniform_real_distribution<double> dep(0.1, 80.0), logit(-30.0, 30.0), shift(-500.0, 500.0);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 16;
    std::vector<double> dc(n), dd(n), cc(n), cd(n), cc2(n), cd2(n);
    const double a = shift(rng);
    for (std::size_t i = 0; i < n; ++i) {
      dc[i] = dep(rng);
      dd[i] = dep(rng);
      cc[i] = logit(rng);
      cd[i] = logit(rng);
      cc2[i] = cc[i] + a;
      cd2[i] = cd[i] + a;
    }
    auto T = [n](const std::vector<double>& v) { return Tensor::from({1, 1, 4, n / 4}, v); };
    const Tensor f = fuse(T(dc), T(dd), T(cc), T(cd));
    const Tensor shifted = fuse(T(dc), T(dd), T(cc2), T(cd2));
    const Tensor swapped = fuse(T(dd), T(dc), T(cd), T(cc));
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GE(f.data()[i], std::min(dc[i], dd[i]));
      EXPECT_LE(f.data()[i], std::max(dc[i], dd[i]));
      EXPECT_LE(std::abs(shifted.data()[i] - f.data()[i]), 1e-12);
      EXPECT_EQ(swapped.data()[i], f.data()[i]);
    }
  }
}

TEST(Fuse, DepthMapFormIsFullyValid) {
  const DepthMap a = DepthMap::from_depths(1, 2, {2.0, 3.0}), b = DepthMap::from_depths(1, 2, {4.0, 3.0});
  const DepthMap f = fuse(a, b, {0.0, 1.0}, {std::log(3.0), -1.0});
  EXPECT_TRUE(f.fully_valid());
  EXPECT_NEAR(f.depth(0, 0), 3.5, 1e-15);
  EXPECT_EQ(f.depth(0, 1), 3.0);
  EXPECT_THROW(fuse(a, DepthMap::from_depths(1, 2, {1.0, 0.0}), {0, 0}, {0, 0}), std::invalid_argument);
}

TEST(Fuse, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(37);
  const double err = max_gradient_error(
      [](const std::vector<Tensor>& x) { return fuse(x[0], x[1], x[2], x[3]); },
      {test::random_tensor(rng, {1, 1, 4, 4}, 1, 30, true), test::random_tensor(rng, {1, 1, 4, 4}, 1, 30, true),
       test::random_tensor(rng, {1, 1, 4, 4}, -3, 3, true), test::random_tensor(rng, {1, 1, 4, 4}, -3, 3, true)},
      1e-5, 5);
  EXPECT_LE(err, 1e-4);
}

TEST(Backbone, MapLevelForwardOnSynthetic) {
  const SceneRender s = synth_scene(SceneConfig{}, 1);
  const DepthMap sp = sparsify(s.depth, 0.05, 1);
  const BackboneOutput o = backbone_forward(Backbone(BackboneConfig{}), s.rgb, sp);
  EXPECT_EQ(o.d_c.shape(), (Shape{1, 1, 64, 64}));
  const DepthMap d = tensor_to_depth(o.d_d);
  EXPECT_TRUE(d.fully_valid());
}

}  // namespace
}  // namespace dcomp
