// SPDX-License-Identifier: Apache-2.0

#include "dcomp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dcomp/png_io.hpp"
#include "dcomp/rng.hpp"

namespace dcomp {

SparsePattern parse_sparse_pattern(const std::string& name) {
  if (name == "uniform") return SparsePattern::kUniform;
  if (name == "scanline") return SparsePattern::kScanline;
  throw std::invalid_argument("unknown sparse pattern '" + name + "' (expected uniform or scanline)");
}

std::string to_string(SparsePattern pattern) {
  return pattern == SparsePattern::kUniform ? "uniform" : "scanline";
}

void SceneConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SceneConfig: " + m); };
  if (width == 0 || height == 0) fail("image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 170.0)) fail("fov_deg must lie in (0, 170)");
  if (!(camera_height > 0.0)) fail("camera_height must be positive");
  if (!(depth_min > 0.0) || !(depth_max > depth_min)) fail("depth range must satisfy 0 < depth_min < depth_max");
  if (depth_max >= 65535.0 / kDepthPngScale) fail("depth_max exceeds the depth PNG range");
  if (n_boxes < 0 || n_poles < 0 || n_spheres < 0) fail("primitive counts must be non-negative");
  if (!(sparse_density > 0.0 && sparse_density <= 1.0)) fail("sparse_density must lie in (0, 1]");
  if (!(gt_density > 0.0 && gt_density <= 1.0)) fail("gt_density must lie in (0, 1]");
  if (!(ambient >= 0.0 && ambient <= 1.0)) fail("ambient must lie in [0, 1]");
  if (std::hypot(light_dir[0], light_dir[1], light_dir[2]) == 0.0) fail("light_dir must be non-zero");
}

namespace {

struct Vec3 {
  double x, y, z;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 normalized() const {
    const double n = std::sqrt(dot(*this));
    return {x / n, y / n, z / n};
  }
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal{0, 1, 0};
  int id = -1;
};

struct Box {
  Vec3 lo, hi;
};
struct Pole {
  double cx, cz, radius, top;
};
struct Sphere {
  Vec3 center;
  double radius;
};

struct Scene {
  double wall_z = 0.0;
  bool wall = false;
  std::vector<Box> boxes;
  std::vector<Pole> poles;
  std::vector<Sphere> spheres;
  std::vector<Vec3> albedo;  // indexed by object id
};

constexpr double kEps = 1e-9;

void consider(Hit& best, double t, const Vec3& n, int id) {
  if (t > kEps && t < best.t) best = {t, n, id};
}

void intersect_box(const Box& b, const Vec3& o, const Vec3& d, int id, Hit& best) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  Vec3 n_enter{0, 0, 0};
  const double os[3] = {o.x, o.y, o.z}, ds[3] = {d.x, d.y, d.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z}, hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ds[a]) < 1e-15) {
      if (os[a] < lo[a] || os[a] > hi[a]) return;
      continue;
    }
    double ta = (lo[a] - os[a]) / ds[a], tb = (hi[a] - os[a]) / ds[a];
    double sign = -1.0;
    if (ta > tb) {
      std::swap(ta, tb);
      sign = 1.0;
    }
    if (ta > t0) {
      t0 = ta;
      n_enter = {a == 0 ? sign : 0.0, a == 1 ? sign : 0.0, a == 2 ? sign : 0.0};
    }
    t1 = std::min(t1, tb);
  }
  if (t0 <= t1) consider(best, t0, n_enter, id);
}

void intersect_pole(const Pole& p, const Vec3& o, const Vec3& d, int id, Hit& best) {
  const double ox = o.x - p.cx, oz = o.z - p.cz;
  const double a = d.x * d.x + d.z * d.z;
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d.x + oz * d.z);
    const double c = ox * ox + oz * oz - p.radius * p.radius;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      const double y = o.y + t * d.y;
      if (y >= 0.0 && y <= p.top) {
        consider(best, t, Vec3{ox + t * d.x, 0.0, oz + t * d.z}.normalized(), id);
      }
    }
  }
  if (std::abs(d.y) > 1e-15) {
    const double t = (p.top - o.y) / d.y;
    const double x = ox + t * d.x, z = oz + t * d.z;
    if (x * x + z * z <= p.radius * p.radius) consider(best, t, {0, 1, 0}, id);
  }
}

void intersect_sphere(const Sphere& s, const Vec3& o, const Vec3& d, int id, Hit& best) {
  const Vec3 oc = o - s.center;
  const double a = d.dot(d), b = 2.0 * oc.dot(d), c = oc.dot(oc) - s.radius * s.radius;
  const double disc = b * b - 4 * a * c;
  if (disc < 0.0) return;
  const double t = (-b - std::sqrt(disc)) / (2 * a);
  consider(best, t, ((o + d * t) - s.center).normalized(), id);
}

Scene build_scene(const SceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  Scene s;
  s.albedo.push_back({0.42, 0.40, 0.38});  // ground
  s.albedo.push_back({uni(0.5, 0.9), uni(0.5, 0.9), uni(0.5, 0.9)});
  s.wall = cfg.backdrop;
  s.wall_z = uni(0.8, 0.95) * cfg.depth_max;
  const double far = cfg.backdrop ? 0.85 * s.wall_z : cfg.depth_max;
  const double tan_half = std::tan(cfg.fov_deg * std::numbers::pi / 360.0);
  auto place = [&](double margin) {
    const double z = uni(cfg.depth_min, std::max(cfg.depth_min, far - margin));
    const double x = uni(-0.9, 0.9) * z * tan_half;
    return std::pair{x, z};
  };
  auto color = [&] { return Vec3{uni(0.1, 0.95), uni(0.1, 0.95), uni(0.1, 0.95)}; };
  for (int i = 0; i < cfg.n_boxes; ++i) {
    const double w = uni(0.8, 3.0), h = uni(0.8, 2.5), dz = uni(0.8, 3.0);
    auto [x, z] = place(dz);
    s.boxes.push_back({{x - w / 2, 0.0, z}, {x + w / 2, h, z + dz}});
    s.albedo.push_back(color());
  }
  for (int i = 0; i < cfg.n_poles; ++i) {
    auto [x, z] = place(0.0);
    s.poles.push_back({x, z, uni(0.1, 0.25), uni(2.5, 5.0)});
    s.albedo.push_back(color());
  }
  for (int i = 0; i < cfg.n_spheres; ++i) {
    const double r = uni(0.4, 1.2);
    auto [x, z] = place(r);
    s.spheres.push_back({{x, r, z + r}, r});
    s.albedo.push_back(color());
  }
  return s;
}

}  // namespace

SceneRender synth_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed({seed, 0x5ce7e}));
  const Scene scene = build_scene(cfg, rng);

  const double pitch = cfg.pitch_deg * std::numbers::pi / 180.0;
  const Vec3 origin{0.0, cfg.camera_height, 0.0};
  const Vec3 fwd{0.0, -std::sin(pitch), std::cos(pitch)};
  const Vec3 up{0.0, std::cos(pitch), std::sin(pitch)};
  const Vec3 right{1.0, 0.0, 0.0};
  const double focal = 0.5 * static_cast<double>(cfg.width) / std::tan(cfg.fov_deg * std::numbers::pi / 360.0);
  const Vec3 light = Vec3{cfg.light_dir[0], cfg.light_dir[1], cfg.light_dir[2]}.normalized();

  const std::size_t h = cfg.height, w = cfg.width;
  SceneRender out{RgbImage(h, w), DepthMap(h, w), std::vector<int>(h * w, 0)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double xn = (static_cast<double>(c) + 0.5 - 0.5 * static_cast<double>(w)) / focal;
      const double yn = (static_cast<double>(r) + 0.5 - 0.5 * static_cast<double>(h)) / focal;
      // fwd, right and up are orthonormal, so the ray parameter equals camera z.
      const Vec3 d = fwd + right * xn - up * yn;
      Hit best;
      if (d.y < 0.0) consider(best, -origin.y / d.y, {0, 1, 0}, 0);
      if (scene.wall && d.z > 0.0) consider(best, scene.wall_z / d.z, {0, 0, -1}, 1);
      int id = 2;
      for (const auto& b : scene.boxes) intersect_box(b, origin, d, id++, best);
      for (const auto& p : scene.poles) intersect_pole(p, origin, d, id++, best);
      for (const auto& s : scene.spheres) intersect_sphere(s, origin, d, id++, best);
      if (best.id < 0) {
        // Only reachable without a backdrop: treat as a far fronto-parallel plane.
        best = {cfg.depth_max, {0, 0, -1}, 1};
      }
      out.depth.set(r, c, best.t);
      out.object_id[r * w + c] = best.id;
      const double shade = cfg.ambient + (1.0 - cfg.ambient) * std::max(0.0, best.normal.dot(light));
      const Vec3& a = scene.albedo[static_cast<std::size_t>(best.id)];
      out.rgb.set(0, r, c, a.x * shade);
      out.rgb.set(1, r, c, a.y * shade);
      out.rgb.set(2, r, c, a.z * shade);
    }
  }
  return out;
}

DepthMap sparsify(const DepthMap& dense, double density, std::uint64_t seed, SparsePattern pattern) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw std::invalid_argument("sparsify: density must lie in (0, 1], got " + std::to_string(density));
  }
  if (!dense.fully_valid()) throw std::invalid_argument("sparsify: input map must be fully valid");
  if (density == 1.0) return dense;
  const std::size_t h = dense.height(), w = dense.width();
  const std::size_t target = static_cast<std::size_t>(std::llround(density * static_cast<double>(h * w)));

  std::vector<std::size_t> candidates;
  if (pattern == SparsePattern::kUniform) {
    candidates.resize(h * w);
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  } else {
    std::size_t rows = static_cast<std::size_t>(std::ceil(static_cast<double>(h) * std::sqrt(density)));
    rows = std::clamp<std::size_t>(std::max(rows, (target + w - 1) / w), 1, h);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t r = static_cast<std::size_t>((static_cast<double>(i) + 0.5) * static_cast<double>(h) /
                                                     static_cast<double>(rows));
      for (std::size_t c = 0; c < w; ++c) candidates.push_back(r * w + c);
    }
  }
  std::mt19937_64 rng(mix_seed({seed, 0x5a25e}));
  const std::size_t keep = std::min(target, candidates.size());
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  DepthMap out(h, w);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t p = candidates[i];
    out.set(p / w, p % w, dense.depth_at(p));
  }
  return out;
}

DepthMap quantize_to_png_grid(const DepthMap& map) {
  DepthMap out(map.height(), map.width());
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.valid_at(i)) out.set(i / map.width(), i % map.width(), quantize_depth(map.depth_at(i)) / kDepthPngScale);
  }
  return out;
}

RgbImage quantize_to_8bit(const RgbImage& image) {
  std::vector<double> v(image.planar().begin(), image.planar().end());
  for (double& x : v) x = static_cast<double>(std::lround(x * 255.0)) / 255.0;
  return RgbImage::from_planar(image.height(), image.width(), std::move(v));
}

}  // namespace dcomp
