// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of the analytic gradients.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcomp/tensor.hpp"

namespace dcomp {

struct GradcheckOptions {
  std::size_t instances = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0x5eed;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares backward() against central differences of a random projection
/// of fn's output, for every element of every input that requires a grad.
/// Returns the largest relative error seen.
double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, double step, std::uint64_t seed);

struct OpResult {
  std::string op;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<OpResult> ops;
  bool passed() const;
};

/// The full suite: conv2d, activations, softmax, bilinear_gather (values and
/// positions), fuse, refinement (coarse, weights, offsets), masked_loss and a
/// composite graph.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace dcomp
