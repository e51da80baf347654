// SPDX-License-Identifier: Apache-2.0

#include "dcomp/depth_map.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcomp {

DepthMap::DepthMap(std::size_t height, std::size_t width)
    : height_(height), width_(width), depth_(height * width, 0.0), valid_(height * width, 0) {}

DepthMap DepthMap::from_depths(std::size_t height, std::size_t width, std::vector<double> depth) {
  if (depth.size() != height * width) {
    throw std::invalid_argument("DepthMap: expected " + std::to_string(height * width) + " depths, got " +
                                std::to_string(depth.size()));
  }
  DepthMap m(height, width);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth[i];
    if (!std::isfinite(d) || d < 0.0) {
      throw std::invalid_argument("DepthMap: depth must be finite and non-negative, got " + std::to_string(d));
    }
    m.valid_[i] = d > 0.0 ? 1 : 0;
  }
  m.depth_ = std::move(depth);
  return m;
}

void DepthMap::set(std::size_t row, std::size_t col, double depth) {
  if (row >= height_ || col >= width_) throw std::out_of_range("DepthMap::set: pixel out of range");
  if (!std::isfinite(depth) || depth < 0.0) {
    throw std::invalid_argument("DepthMap::set: depth must be finite and non-negative");
  }
  const std::size_t i = row * width_ + col;
  depth_[i] = depth;
  valid_[i] = depth > 0.0 ? 1 : 0;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

double DepthMap::density() const {
  return size() == 0 ? 0.0 : static_cast<double>(valid_count()) / static_cast<double>(size());
}

RgbImage::RgbImage(std::size_t height, std::size_t width)
    : height_(height), width_(width), data_(3 * height * width, 0.0) {}

RgbImage RgbImage::from_planar(std::size_t height, std::size_t width, std::vector<double> planar) {
  if (planar.size() != 3 * height * width) throw std::invalid_argument("RgbImage: wrong number of values");
  for (double v : planar) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("RgbImage: values must lie in [0,1]");
  }
  RgbImage img;
  img.height_ = height;
  img.width_ = width;
  img.data_ = std::move(planar);
  return img;
}

void RgbImage::set(std::size_t channel, std::size_t row, std::size_t col, double value) {
  data_[(channel * height_ + row) * width_ + col] = std::clamp(value, 0.0, 1.0);
}

}  // namespace dcomp
