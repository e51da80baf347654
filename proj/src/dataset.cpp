// SPDX-License-Identifier: Apache-2.0

#include "dcomp/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "dcomp/png_io.hpp"
#include "dcomp/rng.hpp"

namespace fs = std::filesystem;

namespace dcomp {

std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return buf;
}

std::vector<FrameRef> list_frames(const fs::path& root, const std::string& split) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<FrameRef> refs;
  std::vector<fs::path> split_dirs;
  if (split.empty()) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) split_dirs.push_back(e.path());
    }
  } else if (fs::is_directory(root / split)) {
    split_dirs.push_back(root / split);
  }
  for (const auto& sd : split_dirs) {
    for (const auto& scene : fs::directory_iterator(sd)) {
      const fs::path sparse = scene.path() / "sparse";
      if (!fs::is_directory(sparse)) continue;
      for (const auto& f : fs::directory_iterator(sparse)) {
        if (f.path().extension() != ".png") continue;
        refs.push_back({sd.filename().string(), scene.path().filename().string(), f.path().stem().string(), root});
      }
    }
  }
  std::sort(refs.begin(), refs.end(), [](const FrameRef& a, const FrameRef& b) { return a.key() < b.key(); });
  return refs;
}

Frame load_frame(const FrameRef& ref, bool with_rgb) {
  Frame f;
  f.key = ref.key();
  f.sparse = read_depth_png(ref.path("sparse"));
  if (fs::exists(ref.path("groundtruth"))) f.groundtruth = read_depth_png(ref.path("groundtruth"));
  if (with_rgb) f.rgb = read_rgb_png(ref.path("image"));
  return f;
}

std::vector<Frame> load_split(const fs::path& root, const std::string& split, bool with_rgb) {
  std::vector<Frame> frames;
  for (const auto& ref : list_frames(root, split)) frames.push_back(load_frame(ref, with_rgb));
  return frames;
}

void write_frame(const fs::path& root, const std::string& split, const std::string& scene, std::size_t index,
                 const Frame& frame) {
  const fs::path base = root / split / scene;
  const std::string file = frame_name(index) + ".png";
  write_rgb_png(frame.rgb, base / "image" / file);
  write_depth_png(frame.sparse, base / "sparse" / file);
  write_depth_png(frame.groundtruth, base / "groundtruth" / file);
}

Frame make_synthetic_frame(const SceneConfig& config, std::uint64_t seed, std::size_t index,
                           const std::string& key_prefix) {
  const std::uint64_t s = mix_seed({seed, index});
  SceneRender scene = synth_scene(config, s);
  DepthMap dense = quantize_to_png_grid(scene.depth);
  Frame f;
  f.key = key_prefix + "/" + frame_name(index);
  f.rgb = quantize_to_8bit(scene.rgb);
  f.sparse = sparsify(dense, config.sparse_density, mix_seed({s, 1}), config.sparse_pattern);
  f.groundtruth = config.gt_density < 1.0 ? sparsify(dense, config.gt_density, mix_seed({s, 2})) : dense;
  return f;
}

std::vector<Frame> make_synthetic_frames(const SceneConfig& config, std::uint64_t seed, std::size_t count,
                                         std::size_t first_index, const std::string& key_prefix) {
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) frames.push_back(make_synthetic_frame(config, seed, first_index + i, key_prefix));
  return frames;
}

}  // namespace dcomp
