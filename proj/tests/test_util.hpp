// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the test binaries.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "dcomp/depth_map.hpp"
#include "dcomp/tensor.hpp"

namespace dcomp::test {

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi, bool grad = false) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), random_values(rng, n, lo, hi), grad);
}

/// Map with roughly `density` of its pixels valid, depths in [lo, hi].
inline DepthMap random_sparse(std::mt19937_64& rng, std::size_t h, std::size_t w, double density, double lo = 1.0,
                              double hi = 80.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0), d(lo, hi);
  DepthMap m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (u(rng) < density) m.set(r, c, d(rng));
    }
  }
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dcomp_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace dcomp::test
