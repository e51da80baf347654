// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dcomp {

/// H x W depth grid in meters with an explicit validity mask.
///
/// Invalid pixels always store depth 0 and valid pixels a strictly positive
/// depth; every mutator keeps the two representations consistent.
class DepthMap {
 public:
  DepthMap() = default;
  /// All-invalid map.
  DepthMap(std::size_t height, std::size_t width);

  /// Pixels with depth > 0 become valid, 0 becomes invalid. Negative or
  /// non-finite depths are rejected.
  static DepthMap from_depths(std::size_t height, std::size_t width, std::vector<double> depth);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return depth_.size(); }

  double depth(std::size_t row, std::size_t col) const { return depth_[row * width_ + col]; }
  bool valid(std::size_t row, std::size_t col) const { return valid_[row * width_ + col] != 0; }
  double depth_at(std::size_t index) const { return depth_[index]; }
  bool valid_at(std::size_t index) const { return valid_[index] != 0; }

  std::span<const double> depths() const { return depth_; }
  std::span<const std::uint8_t> mask() const { return valid_; }

  /// Sets a valid depth (> 0), or invalidates the pixel when depth == 0.
  void set(std::size_t row, std::size_t col, double depth);
  void invalidate(std::size_t row, std::size_t col) { set(row, col, 0.0); }

  std::size_t valid_count() const;
  double density() const;
  bool fully_valid() const { return valid_count() == size(); }

  bool operator==(const DepthMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> depth_;
  std::vector<std::uint8_t> valid_;
};

/// Planar three-channel image with values in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width);
  /// `planar` holds R, G and B planes back to back; values outside [0,1]
  /// are rejected.
  static RgbImage from_planar(std::size_t height, std::size_t width, std::vector<double> planar);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  double at(std::size_t channel, std::size_t row, std::size_t col) const {
    return data_[(channel * height_ + row) * width_ + col];
  }
  /// Value is clamped into [0, 1].
  void set(std::size_t channel, std::size_t row, std::size_t col, double value);

  std::span<const double> planar() const { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

}  // namespace dcomp
