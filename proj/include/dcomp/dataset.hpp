// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout: <root>/<split>/<scene>/{image,sparse,groundtruth}/NNNNN.png

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcomp/depth_map.hpp"
#include "dcomp/synth.hpp"

namespace dcomp {

struct Frame {
  std::string key;  // "<split>/<scene>/<name>"
  RgbImage rgb;
  DepthMap sparse;
  DepthMap groundtruth;
};

struct FrameRef {
  std::string split;
  std::string scene;
  std::string name;  // file stem, e.g. "00007"
  std::filesystem::path root;

  std::string key() const { return split + "/" + scene + "/" + name; }
  std::filesystem::path path(const std::string& kind) const {
    return root / split / scene / kind / (name + ".png");
  }
};

/// Frames with a sparse input under <root>/<split>, sorted by key. An empty
/// split lists every split.
std::vector<FrameRef> list_frames(const std::filesystem::path& root, const std::string& split = "");

/// Loads the parts that exist; the RGB image is required only when asked for.
Frame load_frame(const FrameRef& ref, bool with_rgb = true);
std::vector<Frame> load_split(const std::filesystem::path& root, const std::string& split, bool with_rgb = true);

void write_frame(const std::filesystem::path& root, const std::string& split, const std::string& scene,
                 std::size_t index, const Frame& frame);

std::string frame_name(std::size_t index);

/// One synthetic frame, quantized as if it had been stored on disk.
Frame make_synthetic_frame(const SceneConfig& config, std::uint64_t seed, std::size_t index,
                           const std::string& key_prefix = "synth");
std::vector<Frame> make_synthetic_frames(const SceneConfig& config, std::uint64_t seed, std::size_t count,
                                         std::size_t first_index = 0, const std::string& key_prefix = "synth");

}  // namespace dcomp
