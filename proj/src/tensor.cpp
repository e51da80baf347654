// SPDX-License-Identifier: Apache-2.0

#include "dcomp/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace dcomp {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// Product of dims before / after `axis`.
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [df](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto xin = ctx.input(0);
    auto y = ctx.output();
    auto gi = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * df(xin[i], y[i]);
  });
}

enum class Bcast { kNone, kScalarA, kScalarB };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kNone;
  if (b.numel() == 1) return Bcast::kScalarB;
  if (a.numel() == 1) return Bcast::kScalarA;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BackwardContext

std::span<const double> BackwardContext::grad_out() const { return self_.grad; }
std::span<const double> BackwardContext::output() const { return self_.data; }
std::span<const double> BackwardContext::input(std::size_t i) const { return self_.inputs.at(i)->data; }
const Shape& BackwardContext::input_shape(std::size_t i) const { return self_.inputs.at(i)->shape; }
bool BackwardContext::wants(std::size_t i) const { return self_.inputs.at(i)->requires_grad; }

std::span<double> BackwardContext::grad_in(std::size_t i) {
  auto& node = *self_.inputs.at(i);
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values));
  bool any = false;
  for (const auto& t : inputs) {
    if (!t.defined()) throw std::invalid_argument("make_result: undefined input tensor");
    any = any || t.requires_grad();
  }
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw std::logic_error("mutable_data: only leaf tensors may be modified");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

BackwardStats Tensor::backward(BackwardOptions options) const {
  if (numel() != 1) {
    throw ShapeError("backward(): loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) throw std::logic_error("backward(): tensor does not require grad");

  // Post-order DFS over gradient-requiring nodes gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->is_leaf() && !n->grad.empty() && !options.accumulate) {
      throw std::logic_error(
          "backward(): a leaf already holds a gradient from an earlier pass; call zero_grad() or "
          "set BackwardOptions::accumulate");
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    if (!n->grad.empty()) {
      BackwardContext ctx(*n);
      n->backward(ctx);
    }
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  return {order.size()};
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast k = broadcast_kind(a, b, "add");
  const Tensor& big = k == Bcast::kScalarA ? b : a;
  std::vector<double> out(big.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[k == Bcast::kScalarA ? 0 : i] + y[k == Bcast::kScalarB ? 0 : i];
  }
  return Tensor::make_result(big.shape(), std::move(out), {a, b}, [k](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    for (std::size_t side = 0; side < 2; ++side) {
      if (!ctx.wants(side)) continue;
      auto gi = ctx.grad_in(side);
      bool scalar = (side == 0 && k == Bcast::kScalarA) || (side == 1 && k == Bcast::kScalarB);
      for (std::size_t i = 0; i < g.size(); ++i) gi[scalar ? 0 : i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast k = broadcast_kind(a, b, "mul");
  const Tensor& big = k == Bcast::kScalarA ? b : a;
  std::vector<double> out(big.numel());
  auto x = a.data(), y = b.data();
  auto ia = [k](std::size_t i) { return k == Bcast::kScalarA ? 0 : i; };
  auto ib = [k](std::size_t i) { return k == Bcast::kScalarB ? 0 : i; };
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[ia(i)] * y[ib(i)];
  return Tensor::make_result(big.shape(), std::move(out), {a, b}, [ia, ib](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto x = ctx.input(0), y = ctx.input(1);
    if (ctx.wants(0)) {
      auto gi = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) gi[ia(i)] += g[i] * y[ib(i)];
    }
    if (ctx.wants(1)) {
      auto gi = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gi[ib(i)] += g[i] * x[ia(i)];
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({}, {s}, {a}, [](BackwardContext& ctx) {
    double g = ctx.grad_out()[0];
    for (double& gi : ctx.grad_in(0)) gi += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  }
  const std::size_t n = a.shape()[axis];
  auto [outer, inner] = outer_inner(a.shape(), axis);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [n, outer, inner](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto y = ctx.output();
    auto gi = ctx.grad_in(0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          gi[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      require(i == axis || s[i] == s0[i], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  auto [outer, inner] = outer_inner(out_shape, axis);
  const std::size_t total = out_shape[axis];
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].data();
    const std::size_t block = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * block, block, out.begin() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  return Tensor::make_result(out_shape, std::move(out), parts,
                             [widths, outer, inner, total](BackwardContext& ctx) {
                               auto g = ctx.grad_out();
                               std::size_t offset = 0;
                               for (std::size_t p = 0; p < widths.size(); ++p) {
                                 const std::size_t block = widths[p] * inner;
                                 if (ctx.wants(p)) {
                                   auto gi = ctx.grad_in(p);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* src = g.data() + (o * total + offset) * inner;
                                     double* dst = gi.data() + o * block;
                                     for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                   }
                                 }
                                 offset += widths[p];
                               }
                             });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < a.rank(), "slice: axis out of range");
  require(start + length <= a.shape()[axis], "slice: range exceeds dimension of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto [outer, inner] = outer_inner(a.shape(), axis);
  const std::size_t full = a.shape()[axis];
  auto x = a.data();
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + (o * full + start) * inner, length * inner, out.begin() + o * length * inner);
  }
  return Tensor::make_result(out_shape, std::move(out), {a},
                             [outer, inner, full, start, length](BackwardContext& ctx) {
                               auto g = ctx.grad_out();
                               auto gi = ctx.grad_in(0);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < length * inner; ++i) {
                                   gi[(o * full + start) * inner + i] += g[o * length * inner + i];
                                 }
                               }
                             });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gi = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* dx) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [F,C,kh,kw], got " + shape_str(weight.shape()));
  ConvGeom g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  require(weight.dim(1) == g.c, "conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                    " input channels, input has " + std::to_string(g.c));
  require(g.kh % 2 == 1 && g.kw % 2 == 1, "conv2d: kernel sizes must be odd");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(g.h + 2 * padding >= g.kh && g.w + 2 * padding >= g.kw, "conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.numel() == g.f, "conv2d: bias must have " + std::to_string(g.f) + " entries");
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t hw_out = g.ho * g.wo;
  const long lf = static_cast<long>(g.f), lckk = static_cast<long>(ckk), lhw = static_cast<long>(hw_out);
  std::vector<double> out(g.n * g.f * hw_out);
  // Products run on owned, SIMD-aligned copies. Eigen peels vector loops by
  // runtime address, so mapped heap buffers would make rounding depend on
  // where the allocator placed them.
  const RowMat wmat = CMapMat(weight.data().data(), lf, lckk);
  RowMat col(lckk, lhw), prod(lf, lhw);
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = input.data().data() + n * g.c * g.h * g.w;
    if (g.pointwise()) {
      col = CMapMat(xn, lckk, lhw);
    } else {
      im2col(xn, g, col.data());
    }
    prod.noalias() = wmat * col;
    double* on = out.data() + n * g.f * hw_out;
    for (std::size_t f = 0; f < g.f; ++f) {
      const double b = has_bias ? bias.data()[f] : 0.0;
      for (std::size_t i = 0; i < hw_out; ++i) on[f * hw_out + i] = prod(static_cast<long>(f), static_cast<long>(i)) + b;
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result({g.n, g.f, g.ho, g.wo}, std::move(out), std::move(inputs),
                             [g, has_bias](BackwardContext& ctx) {
                               const std::size_t ckk = g.c * g.kh * g.kw;
                               const std::size_t hw_out = g.ho * g.wo;
                               const long lf = static_cast<long>(g.f), lckk = static_cast<long>(ckk),
                                          lhw = static_cast<long>(hw_out);
                               auto gout = ctx.grad_out();
                               auto x = ctx.input(0);
                               const RowMat wmat = CMapMat(ctx.input(1).data(), lf, lckk);
                               RowMat col(lckk, lhw), go(lf, lhw), dcol(lckk, lhw), dw(lf, lckk);
                               for (std::size_t n = 0; n < g.n; ++n) {
                                 go = CMapMat(gout.data() + n * g.f * hw_out, lf, lhw);
                                 if (ctx.wants(1)) {
                                   const double* xn = x.data() + n * g.c * g.h * g.w;
                                   if (g.pointwise()) {
                                     col = CMapMat(xn, lckk, lhw);
                                   } else {
                                     im2col(xn, g, col.data());
                                   }
                                   dw.noalias() = go * col.transpose();
                                   auto gw = ctx.grad_in(1);
                                   for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw.data()[i];
                                 }
                                 if (has_bias && ctx.wants(2)) {
                                   auto db = ctx.grad_in(2);
                                   for (std::size_t f = 0; f < g.f; ++f) {
                                     double s = 0.0;
                                     for (std::size_t i = 0; i < hw_out; ++i) s += go.data()[f * hw_out + i];
                                     db[f] += s;
                                   }
                                 }
                                 if (ctx.wants(0)) {
                                   double* dxn = ctx.grad_in(0).data() + n * g.c * g.h * g.w;
                                   dcol.noalias() = wmat.transpose() * go;
                                   if (g.pointwise()) {
                                     for (std::size_t i = 0; i < ckk * hw_out; ++i) dxn[i] += dcol.data()[i];
                                   } else {
                                     col2im_add(dcol.data(), g, dxn);
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Upsampling

Tensor upsample_nearest2x(const Tensor& a) {
  require(a.rank() == 4, "upsample_nearest2x: expected [N,C,H,W]");
  const std::size_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  std::vector<double> out(planes * 4 * h * w);
  auto x = a.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < 2 * h; ++oy) {
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        out[(p * 2 * h + oy) * 2 * w + ox] = x[(p * h + oy / 2) * w + ox / 2];
      }
    }
  }
  return Tensor::make_result({a.dim(0), a.dim(1), 2 * h, 2 * w}, std::move(out), {a},
                             [planes, h, w](BackwardContext& ctx) {
                               auto g = ctx.grad_out();
                               auto gi = ctx.grad_in(0);
                               for (std::size_t p = 0; p < planes; ++p) {
                                 for (std::size_t oy = 0; oy < 2 * h; ++oy) {
                                   for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                                     gi[(p * h + oy / 2) * w + ox / 2] += g[(p * 2 * h + oy) * 2 * w + ox];
                                   }
                                 }
                               }
                             });
}

namespace {

struct Taps {
  std::size_t i0, i1;
  double w0, w1;
};

// Source taps for output index o of a 2x half-pixel upsample over n inputs.
Taps upsample_taps(std::size_t o, std::size_t n) {
  const std::size_t i = o / 2;
  if (o % 2 == 0) return {i == 0 ? 0 : i - 1, i, 0.25, 0.75};
  return {i, std::min(i + 1, n - 1), 0.75, 0.25};
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& a) {
  require(a.rank() == 4, "upsample_bilinear2x: expected [N,C,H,W]");
  const std::size_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  std::vector<Taps> rt(2 * h), ct(2 * w);
  for (std::size_t o = 0; o < 2 * h; ++o) rt[o] = upsample_taps(o, h);
  for (std::size_t o = 0; o < 2 * w; ++o) ct[o] = upsample_taps(o, w);
  std::vector<double> out(planes * 4 * h * w);
  auto x = a.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    for (std::size_t oy = 0; oy < 2 * h; ++oy) {
      const Taps& r = rt[oy];
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        const Taps& c = ct[ox];
        out[(p * 2 * h + oy) * 2 * w + ox] =
            r.w0 * (c.w0 * src[r.i0 * w + c.i0] + c.w1 * src[r.i0 * w + c.i1]) +
            r.w1 * (c.w0 * src[r.i1 * w + c.i0] + c.w1 * src[r.i1 * w + c.i1]);
      }
    }
  }
  return Tensor::make_result({a.dim(0), a.dim(1), 2 * h, 2 * w}, std::move(out), {a},
                             [planes, h, w, rt, ct](BackwardContext& ctx) {
                               auto g = ctx.grad_out();
                               auto gi = ctx.grad_in(0);
                               for (std::size_t p = 0; p < planes; ++p) {
                                 double* dst = gi.data() + p * h * w;
                                 for (std::size_t oy = 0; oy < 2 * h; ++oy) {
                                   const Taps& r = rt[oy];
                                   for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                                     const Taps& c = ct[ox];
                                     const double v = g[(p * 2 * h + oy) * 2 * w + ox];
                                     dst[r.i0 * w + c.i0] += v * r.w0 * c.w0;
                                     dst[r.i0 * w + c.i1] += v * r.w0 * c.w1;
                                     dst[r.i1 * w + c.i0] += v * r.w1 * c.w0;
                                     dst[r.i1 * w + c.i1] += v * r.w1 * c.w1;
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Bilinear sampling

double bilinear_kernel(double sx, double sy, double tx, double ty) {
  return std::max(0.0, 1.0 - std::abs(sx - tx)) * std::max(0.0, 1.0 - std::abs(sy - ty));
}

namespace {

struct AxisCell {
  std::size_t i0, i1;
  double frac;
  bool inside;
};

AxisCell axis_cell(double x, std::size_t n) {
  const double hi = static_cast<double>(n - 1);
  const bool inside = x >= 0.0 && x <= hi;
  const double cx = std::clamp(x, 0.0, hi);
  std::size_t i0 = static_cast<std::size_t>(std::floor(cx));
  if (n >= 2) i0 = std::min(i0, n - 2);
  else i0 = 0;
  const std::size_t i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, cx - static_cast<double>(i0), inside};
}

}  // namespace

double bilinear_sample(std::span<const double> map, std::size_t height, std::size_t width, double x,
                       double y, double* grad) {
  const AxisCell r = axis_cell(x, height);
  const AxisCell c = axis_cell(y, width);
  const double v00 = map[r.i0 * width + c.i0], v01 = map[r.i0 * width + c.i1];
  const double v10 = map[r.i1 * width + c.i0], v11 = map[r.i1 * width + c.i1];
  const double fx = r.frac, fy = c.frac;
  if (grad != nullptr) {
    grad[0] = r.inside ? (1.0 - fy) * (v10 - v00) + fy * (v11 - v01) : 0.0;
    grad[1] = c.inside ? (1.0 - fx) * (v01 - v00) + fx * (v11 - v10) : 0.0;
  }
  return (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11);
}

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double x, double y) {
  const AxisCell r = axis_cell(x, height);
  const AxisCell c = axis_cell(y, width);
  return {{r.i0 * width + c.i0, r.i0 * width + c.i1, r.i1 * width + c.i0, r.i1 * width + c.i1},
          {(1.0 - r.frac) * (1.0 - c.frac), (1.0 - r.frac) * c.frac, r.frac * (1.0 - c.frac), r.frac * c.frac}};
}

Tensor bilinear_gather(const Tensor& map, const Tensor& positions) {
  require(map.rank() == 2, "bilinear_gather: map must be [H,W], got " + shape_str(map.shape()));
  require(positions.rank() == 2 && positions.dim(1) == 2,
          "bilinear_gather: positions must be [M,2], got " + shape_str(positions.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1), m = positions.dim(0);
  require(h > 0 && w > 0, "bilinear_gather: empty map");
  auto pos = positions.data();
  for (double v : pos) {
    if (std::isnan(v)) throw std::invalid_argument("bilinear_gather: NaN sampling position");
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = bilinear_sample(map.data(), h, w, pos[2 * i], pos[2 * i + 1]);
  return Tensor::make_result({m}, std::move(out), {map, positions}, [h, w, m](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto values = ctx.input(0);
    auto p = ctx.input(1);
    std::span<double> gmap = ctx.wants(0) ? ctx.grad_in(0) : std::span<double>{};
    std::span<double> gpos = ctx.wants(1) ? ctx.grad_in(1) : std::span<double>{};
    for (std::size_t i = 0; i < m; ++i) {
      if (!gpos.empty()) {
        double d[2];
        bilinear_sample(values, h, w, p[2 * i], p[2 * i + 1], d);
        gpos[2 * i] += g[i] * d[0];
        gpos[2 * i + 1] += g[i] * d[1];
      }
      if (!gmap.empty()) {
        const AxisCell r = axis_cell(p[2 * i], h);
        const AxisCell c = axis_cell(p[2 * i + 1], w);
        gmap[r.i0 * w + c.i0] += g[i] * (1.0 - r.frac) * (1.0 - c.frac);
        gmap[r.i0 * w + c.i1] += g[i] * (1.0 - r.frac) * c.frac;
        gmap[r.i1 * w + c.i0] += g[i] * r.frac * (1.0 - c.frac);
        gmap[r.i1 * w + c.i1] += g[i] * r.frac * c.frac;
      }
    }
  });
}

}  // namespace dcomp
