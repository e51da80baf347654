// SPDX-License-Identifier: Apache-2.0

#include "dcomp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcomp/backbone.hpp"
#include "dcomp/deform.hpp"
#include "dcomp/rng.hpp"
#include "dcomp/train.hpp"

namespace dcomp {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, double step, std::uint64_t seed) {
  // Random projection turns any output shape into a scalar objective.
  const Tensor probe = fn(inputs);
  std::mt19937_64 rng(mix_seed({seed, 0x9a0}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r(probe.numel());
  for (double& x : r) x = u(rng);

  std::vector<Tensor> leaves;
  for (const Tensor& t : inputs) leaves.push_back(t.detach(t.requires_grad()));
  const Tensor out = fn(leaves);
  const Tensor objective = out.rank() == 0 && out.numel() == 1 ? mul_scalar(out, r[0])
                                                               : sum(mul(out, Tensor::from(out.shape(), r)));
  objective.backward();

  auto eval = [&](const std::vector<Tensor>& in) {
    const Tensor o = fn(in);
    double s = 0.0;
    auto d = o.data();
    for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * r[i];
    return s;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    std::vector<double> grad(inputs[k].numel(), 0.0);
    if (leaves[k].has_grad()) std::copy(leaves[k].grad().begin(), leaves[k].grad().end(), grad.begin());
    std::vector<double> base(inputs[k].data().begin(), inputs[k].data().end());
    for (std::size_t i = 0; i < base.size(); ++i) {
      std::vector<Tensor> in;
      for (const Tensor& t : inputs) in.push_back(t.detach(false));
      std::vector<double> v = base;
      v[i] = base[i] + step;
      in[k] = Tensor::from(inputs[k].shape(), v);
      const double fp = eval(in);
      v[i] = base[i] - step;
      in[k] = Tensor::from(inputs[k].shape(), v);
      const double fm = eval(in);
      worst = std::max(worst, relative_error(grad[i], (fp - fm) / (2.0 * step)));
    }
  }
  return worst;
}

bool GradcheckReport::passed() const {
  return !ops.empty() && std::all_of(ops.begin(), ops.end(), [](const OpResult& o) { return o.passed; });
}

namespace {

struct Gen {
  std::mt19937_64 rng;

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  Tensor normal(Shape s, double scale, bool grad = true) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = n(rng);
    return Tensor::from(std::move(s), std::move(v), grad);
  }
  Tensor uniform_tensor(Shape s, double lo, double hi, bool grad = true) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = uniform(lo, hi);
    return Tensor::from(std::move(s), std::move(v), grad);
  }
  // Values whose fractional part stays clear of the bilinear kinks.
  double off_grid(double lo, double hi) {
    for (;;) {
      const double x = uniform(lo, hi);
      const double f = x - std::floor(x);
      if (f > 0.01 && f < 0.99) return x;
    }
  }
  // Values kept away from zero, for kinked activations.
  Tensor away_from_zero(Shape s, double scale, double margin) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) {
      do x = uniform(-scale, scale);
      while (std::abs(x) < margin);
    }
    return Tensor::from(std::move(s), std::move(v), true);
  }
};

struct Case {
  std::string name;
  std::function<double(Gen&, double)> run;  // returns max relative error of one instance
};

std::vector<Case> suite() {
  std::vector<Case> c;
  c.push_back({"conv2d", [](Gen& g, double h) {
                 const std::size_t stride = g.rng() % 2 + 1, pad = g.rng() % 2;
                 const std::size_t k = g.rng() % 2 == 0 ? 3 : 1;
                 return max_gradient_error(
                     [stride, pad](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], stride, pad); },
                     {g.normal({2, 2, 5, 5}, 1.0), g.normal({3, 2, k, k}, 0.5), g.normal({3}, 0.5)}, h, g.rng());
               }});
  c.push_back({"sigmoid", [](Gen& g, double h) {
                 return max_gradient_error([](const std::vector<Tensor>& x) { return sigmoid(x[0]); },
                                           {g.normal({4, 4}, 2.0)}, h, g.rng());
               }});
  c.push_back({"softmax", [](Gen& g, double h) {
                 const std::size_t axis = g.rng() % 2;
                 return max_gradient_error([axis](const std::vector<Tensor>& x) { return softmax(x[0], axis); },
                                           {g.normal({3, 4}, 2.0)}, h, g.rng());
               }});
  c.push_back({"activations", [](Gen& g, double h) {
                 return max_gradient_error(
                     [](const std::vector<Tensor>& x) {
                       return add(add(relu(x[0]), elu(x[0])), mul(softplus(x[0]), exp(mul_scalar(abs(x[0]), 0.3))));
                     },
                     {g.away_from_zero({4, 5}, 2.0, 0.01)}, h, g.rng());
               }});
  c.push_back({"upsample", [](Gen& g, double h) {
                 return max_gradient_error(
                     [](const std::vector<Tensor>& x) {
                       return concat({upsample_bilinear2x(x[0]), upsample_nearest2x(x[0])}, 1);
                     },
                     {g.normal({1, 2, 3, 4}, 1.0)}, h, g.rng());
               }});
  auto positions = [](Gen& g, std::size_t m, double lo, double hi, bool grad) {
    std::vector<double> v(2 * m);
    for (double& x : v) x = g.off_grid(lo, hi);
    return Tensor::from({m, 2}, std::move(v), grad);
  };
  c.push_back({"bilinear_gather(values)", [positions](Gen& g, double h) {
                 return max_gradient_error([](const std::vector<Tensor>& x) { return bilinear_gather(x[0], x[1]); },
                                           {g.normal({6, 6}, 1.0), positions(g, 10, -1.0, 6.0, false)}, h, g.rng());
               }});
  c.push_back({"bilinear_gather(positions)", [positions](Gen& g, double h) {
                 return max_gradient_error(
                     [](const std::vector<Tensor>& x) { return bilinear_gather(x[0], x[1]); },
                     {g.normal({6, 6}, 1.0, false), positions(g, 10, -1.0, 6.0, true)}, h, g.rng());
               }});
  c.push_back({"fuse", [](Gen& g, double h) {
                 return max_gradient_error(
                     [](const std::vector<Tensor>& x) { return fuse(x[0], x[1], x[2], x[3]); },
                     {g.uniform_tensor({1, 1, 5, 5}, 1.0, 30.0), g.uniform_tensor({1, 1, 5, 5}, 1.0, 30.0),
                      g.normal({1, 1, 5, 5}, 2.0), g.normal({1, 1, 5, 5}, 2.0)},
                     h, g.rng());
               }});
  auto refine_case = [](std::size_t which, bool centred) {
    return [which, centred](Gen& g, double h) {
      const std::size_t k = 3, n = 10;
      std::vector<double> off(2 * k * k * n * n);
      for (double& x : off) x = g.off_grid(-1.5, 1.5);
      std::vector<Tensor> in{g.uniform_tensor({1, 1, n, n}, 0.5, 2.0, which == 0),
                             g.uniform_tensor({1, k * k, n, n}, 0.02, 0.98, which == 1),
                             Tensor::from({1, 2 * k * k, n, n}, std::move(off), which == 2)};
      return max_gradient_error(
          [k, centred](const std::vector<Tensor>& x) { return mean(deform_refine(x[0], x[1], x[2], k, centred)); }, in,
          h, g.rng());
    };
  };
  c.push_back({"refine(coarse)", refine_case(0, false)});
  c.push_back({"refine(weights)", refine_case(1, false)});
  c.push_back({"refine(offsets)", refine_case(2, false)});
  c.push_back({"refine(mean-subtracted weights)", refine_case(1, true)});
  c.push_back({"refine heads", [](Gen& g, double h) {
                 const std::size_t ch = 4, k = 3;
                 return max_gradient_error(
                     [k](const std::vector<Tensor>& x) {
                       RefineHeads heads;
                       heads.in_channels = x[0].dim(1);
                       heads.k = k;
                       heads.weight_w = x[1];
                       heads.weight_b = x[2];
                       heads.offset_w = x[3];
                       heads.offset_b = x[4];
                       const FieldTensors f = predict_fields(x[0], heads);
                       return concat({f.weights, f.offsets}, 1);
                     },
                     {g.normal({1, ch, 8, 8}, 1.0), g.normal({k * k, ch, 1, 1}, 0.5), g.normal({k * k}, 0.5),
                      g.normal({2 * k * k, ch, 1, 1}, 0.5), g.normal({2 * k * k}, 0.5)},
                     h, g.rng());
               }});
  c.push_back({"masked_loss", [](Gen& g, double h) {
                 const std::size_t n = 36;
                 std::vector<double> y(n), d(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   y[i] = g.uniform(0.0, 1.0) < 0.5 ? 0.0 : g.uniform(1.0, 20.0);
                   do d[i] = g.uniform(1.0, 20.0);
                   while (std::abs(d[i] - y[i]) < 1e-2);
                 }
                 if (y[0] == 0.0) y[0] = d[0] + 1.0;
                 LossConfig cfg;
                 cfg.alpha = g.uniform(0.0, 1.0);
                 return max_gradient_error(
                     [cfg](const std::vector<Tensor>& x) { return masked_loss(x[0], x[1], cfg); },
                     {Tensor::from({1, 1, 6, 6}, d, true), Tensor::from({1, 1, 6, 6}, y)}, h, g.rng());
               }});
  c.push_back({"composite conv-sigmoid-gather-mean", [positions](Gen& g, double h) {
                 const Tensor pos = positions(g, 12, 0.0, 5.0, false);
                 return max_gradient_error(
                     [pos](const std::vector<Tensor>& x) {
                       const Tensor m = sigmoid(conv2d(x[0], x[1], x[2], 1, 1));
                       return mean(bilinear_gather(reshape(m, {6, 6}), pos));
                     },
                     {g.normal({1, 2, 6, 6}, 1.0), g.normal({1, 2, 3, 3}, 0.5), g.normal({1}, 0.5)}, h, g.rng());
               }});
  return c;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  const std::vector<Case> cases = suite();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    OpResult r;
    r.op = cases[ci].name;
    for (std::size_t i = 0; i < options.instances; ++i) {
      Gen g{std::mt19937_64(mix_seed({options.seed, ci, i}))};
      r.max_rel_error = std::max(r.max_rel_error, cases[ci].run(g, options.step));
      ++r.instances;
    }
    r.passed = r.instances > 0 && r.max_rel_error <= options.tolerance;
    report.ops.push_back(r);
  }
  return report;
}

}  // namespace dcomp
