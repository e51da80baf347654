// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a cheap handle onto an immutable node. Every operation that has
// at least one gradient-requiring input records its inputs and a backward
// closure on the node it produces; backward() replays those closures in
// reverse topological order. Leaf tensors keep their gradient between calls,
// interior nodes only hold a scratch gradient during the pass.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcomp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for inconsistent operand shapes or invalid axes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor;

/// View handed to backward closures: upstream gradient, input values, and
/// lazily-allocated gradient buffers for the inputs that require one.
class BackwardContext {
 public:
  BackwardContext(detail::Node& self) : self_(self) {}

  std::span<const double> grad_out() const;
  std::span<const double> output() const;
  std::span<const double> input(std::size_t i) const;
  const Shape& input_shape(std::size_t i) const;
  bool wants(std::size_t i) const;
  /// Accumulation buffer for input i. Only valid when wants(i).
  std::span<double> grad_in(std::size_t i);

 private:
  detail::Node& self_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

struct BackwardOptions {
  /// When false, backward() rejects a pass that would add into a leaf
  /// gradient left over from an earlier pass (call zero_grad() first).
  bool accumulate = false;
};

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Builds the result of a custom operation. The backward closure is only
  /// kept when one of `inputs` requires a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                            BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable storage; only leaves may be modified (optimizer updates).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Leaf copy of the values with no history.
  Tensor detach(bool requires_grad = false) const;

  BackwardStats backward(BackwardOptions options = {}) const;

  // Identity of the underlying node (used by tests and graph bookkeeping).
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend class BackwardContext;
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Operations. All are differentiable with respect to every Tensor argument.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor softplus(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);

/// Cross-correlation over NCHW input with FCkk weights and optional bias[F].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// 2x upsampling of NCHW maps.
Tensor upsample_nearest2x(const Tensor& a);
/// Half-pixel-centred bilinear 2x upsampling with edge replication.
Tensor upsample_bilinear2x(const Tensor& a);

/// Samples a single-channel map [H,W] at real-valued positions [M,2].
/// Each position is (x, y) in map index order: x runs along the first axis
/// (rows) and y along the second (columns). Positions are clamped to
/// [0,H-1]x[0,W-1]; the clamp has zero gradient outside that range.
Tensor bilinear_gather(const Tensor& map, const Tensor& positions);

/// Weight of the four-neighbour bilinear kernel, max(0,1-|dx|)*max(0,1-|dy|).
double bilinear_kernel(double sx, double sy, double tx, double ty);

/// Clamped bilinear sample of a row-major H x W buffer at (x, y) = (row, col).
/// When `grad` is non-null it receives d(sample)/d(x, y) (zero on clamped axes).
double bilinear_sample(std::span<const double> map, std::size_t height, std::size_t width,
                       double x, double y, double* grad = nullptr);

/// The four (flat index, weight) pairs bilinear_sample combines at (x, y).
struct BilinearTaps {
  std::size_t index[4];
  double weight[4];
};
BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double x, double y);

}  // namespace dcomp
