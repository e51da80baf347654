// SPDX-License-Identifier: Apache-2.0
//
// KITTI devkit depth PNGs: 16-bit single channel, depth = value / 256 m,
// value 0 marks a pixel without measurement. Guidance images are 8-bit RGB.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dcomp/depth_map.hpp"

namespace dcomp {

class PngFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDepthPngScale = 256.0;

/// Quantized 16-bit value for a depth in meters (0 for invalid pixels).
/// Throws std::out_of_range when the depth does not fit the format.
std::uint16_t quantize_depth(double meters);

DepthMap read_depth_png(const std::filesystem::path& path);
void write_depth_png(const DepthMap& map, const std::filesystem::path& path);

/// Raw 16-bit grayscale access, row-major.
std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, std::size_t& height, std::size_t& width);
void write_png16(const std::vector<std::uint16_t>& values, std::size_t height, std::size_t width,
                 const std::filesystem::path& path);

RgbImage read_rgb_png(const std::filesystem::path& path);
/// Values are rounded to the nearest of 256 levels.
void write_rgb_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace dcomp
