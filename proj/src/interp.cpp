// SPDX-License-Identifier: Apache-2.0

#include "dcomp/interp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dcomp/delaunay.hpp"
#include "dcomp/rng.hpp"

namespace dcomp {

InterpMethod parse_interp_method(const std::string& name) {
  if (name == "nearest") return InterpMethod::kNearest;
  if (name == "linear") return InterpMethod::kLinear;
  if (name == "cubic") return InterpMethod::kCubic;
  if (name == "rbf") return InterpMethod::kRbf;
  throw std::invalid_argument("unknown interpolation method '" + name + "' (expected nearest, linear, cubic, rbf)");
}

std::string to_string(InterpMethod method) {
  switch (method) {
    case InterpMethod::kNearest: return "nearest";
    case InterpMethod::kLinear: return "linear";
    case InterpMethod::kCubic: return "cubic";
    case InterpMethod::kRbf: return "rbf";
  }
  return "?";
}

namespace {

struct Samples {
  std::vector<Site> sites;
  std::vector<double> values;
};

Samples collect(const DepthMap& m) {
  Samples s;
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (m.valid(r, c)) {
        s.sites.push_back({static_cast<std::int32_t>(c), static_cast<std::int32_t>(r)});
        s.values.push_back(m.depth(r, c));
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Nearest: bucket grid with ring search, exact under (distance, row, col).

DepthMap nearest_fill(const DepthMap& sparse, const Samples& s) {
  const std::size_t h = sparse.height(), w = sparse.width(), n = s.sites.size();
  const double spacing = std::sqrt(static_cast<double>(h * w) / static_cast<double>(n));
  const std::size_t bucket = std::max<std::size_t>(1, static_cast<std::size_t>(spacing));
  const std::size_t gw = (w + bucket - 1) / bucket, gh = (h + bucket - 1) / bucket;
  std::vector<std::size_t> start(gw * gh + 1, 0);
  for (const Site& p : s.sites) ++start[(p.y / bucket) * gw + p.x / bucket + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<std::uint32_t> items(n);
  std::vector<std::size_t> fill(start.begin(), start.end() - 1);
  for (std::uint32_t i = 0; i < n; ++i) {
    const Site& p = s.sites[i];
    items[fill[(p.y / bucket) * gw + p.x / bucket]++] = i;
  }

  DepthMap out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const long br = static_cast<long>(r / bucket), bc = static_cast<long>(c / bucket);
      std::int64_t best_d = -1;
      std::uint32_t best = 0;
      auto better = [&](std::uint32_t i, std::int64_t d) {
        if (best_d < 0 || d < best_d) return true;
        if (d > best_d) return false;
        const Site &a = s.sites[i], &b = s.sites[best];
        return a.y < b.y || (a.y == b.y && a.x < b.x);
      };
      for (long ring = 0;; ++ring) {
        // Anything outside this ring is at least ring * bucket pixels away.
        if (best_d >= 0) {
          const std::int64_t bound = ring == 0 ? 0 : (ring - 1) * static_cast<std::int64_t>(bucket);
          if (best_d < bound * bound) break;
        }
        if (ring > static_cast<long>(std::max(gw, gh))) break;
        for (long gy = br - ring; gy <= br + ring; ++gy) {
          if (gy < 0 || gy >= static_cast<long>(gh)) continue;
          const bool edge_row = gy == br - ring || gy == br + ring;
          for (long gx = bc - ring; gx <= bc + ring; gx += (edge_row || ring == 0) ? 1 : 2 * ring) {
            if (gx < 0 || gx >= static_cast<long>(gw)) continue;
            const std::size_t cell = static_cast<std::size_t>(gy) * gw + static_cast<std::size_t>(gx);
            for (std::size_t k = start[cell]; k < start[cell + 1]; ++k) {
              const std::uint32_t i = items[k];
              const std::int64_t dx = s.sites[i].x - static_cast<std::int64_t>(c);
              const std::int64_t dy = s.sites[i].y - static_cast<std::int64_t>(r);
              const std::int64_t d = dx * dx + dy * dy;
              if (better(i, d)) {
                best_d = d;
                best = i;
              }
            }
          }
        }
      }
      out.set(r, c, s.values[best]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Triangle rasterization shared by Linear and Cubic.

template <typename Eval>
void rasterize(const Triangulation& tri, std::size_t h, std::size_t w, Eval&& eval, std::vector<double>& out,
               std::vector<std::uint8_t>& covered) {
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
    const auto& idx = tri.triangles[t];
    const Site &a = tri.sites[idx[0]], &b = tri.sites[idx[1]], &c = tri.sites[idx[2]];
    const std::int64_t area2 = orient2d(a, b, c);
    const int x0 = std::max(0, std::min({a.x, b.x, c.x})), x1 = std::min<int>(static_cast<int>(w) - 1, std::max({a.x, b.x, c.x}));
    const int y0 = std::max(0, std::min({a.y, b.y, c.y})), y1 = std::min<int>(static_cast<int>(h) - 1, std::max({a.y, b.y, c.y}));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Site p{x, y};
        const std::int64_t o0 = orient2d(b, c, p), o1 = orient2d(c, a, p), o2 = orient2d(a, b, p);
        if (o0 < 0 || o1 < 0 || o2 < 0) continue;
        const double inv = 1.0 / static_cast<double>(area2);
        const std::array<double, 3> mu{static_cast<double>(o0) * inv, static_cast<double>(o1) * inv,
                                       static_cast<double>(o2) * inv};
        const std::size_t pix = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
        out[pix] = eval(t, mu);
        covered[pix] = 1;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Clough-Tocher element in Bernstein-Bezier form. Each triangle is split at
// its centroid into (V_s, V_{s+1}, C); the cross-boundary derivative varies
// linearly along every outer edge, which makes neighbouring elements agree to
// first order on shared edges.

struct Vec2 {
  double x, y;
};

struct CubicPatch {
  // Ordinates for subtriangle s, indexed by (i, j, k) over (V_s, V_{s+1}, C).
  std::array<std::array<double, 10>, 3> b{};
};

constexpr int bidx(int i, int j, int k) {
  // Order: 300 030 003 210 120 201 021 102 012 111
  if (i == 3) return 0;
  if (j == 3) return 1;
  if (k == 3) return 2;
  if (i == 2 && j == 1) return 3;
  if (i == 1 && j == 2) return 4;
  if (i == 2 && k == 1) return 5;
  if (j == 2 && k == 1) return 6;
  if (i == 1 && k == 2) return 7;
  if (j == 1 && k == 2) return 8;
  return 9;
}

CubicPatch build_patch(const std::array<Vec2, 3>& v, const std::array<double, 3>& f, const std::array<Vec2, 3>& g) {
  const Vec2 cen{(v[0].x + v[1].x + v[2].x) / 3.0, (v[0].y + v[1].y + v[2].y) / 3.0};
  auto along = [&](int i, Vec2 to) {
    return f[i] + (g[i].x * (to.x - v[i].x) + g[i].y * (to.y - v[i].y)) / 3.0;
  };
  std::array<double, 3> toward_c{};
  for (int i = 0; i < 3; ++i) toward_c[i] = along(i, cen);

  std::array<double, 3> mid{};  // b111 of subtriangle s
  for (int s = 0; s < 3; ++s) {
    const int a = s, b = (s + 1) % 3;
    const double b300 = f[a], b030 = f[b];
    const double b210 = along(a, v[b]), b120 = along(b, v[a]);
    const double b201 = toward_c[a], b021 = toward_c[b];
    const Vec2 e{v[b].x - v[a].x, v[b].y - v[a].y};
    const double len = std::hypot(e.x, e.y);
    const Vec2 t{e.x / len, e.y / len}, n{-t.y, t.x};
    const Vec2 m{(v[a].x + v[b].x) / 2, (v[a].y + v[b].y) / 2};
    const Vec2 wdir{cen.x - m.x, cen.y - m.y};
    const double tangential = 3.0 * (0.25 * (b210 - b300) + 0.5 * (b120 - b210) + 0.25 * (b030 - b120)) / len;
    const double normal = 0.5 * ((g[a].x + g[b].x) * n.x + (g[a].y + g[b].y) * n.y);
    const double target = (wdir.x * t.x + wdir.y * t.y) * tangential + (wdir.x * n.x + wdir.y * n.y) * normal;
    // Directional derivative at the midpoint along (-1/2, -1/2, 1).
    const double a1 = -0.5, a2 = -0.5, a3 = 1.0;
    const double known = 3.0 * (0.25 * (a1 * b300 + a2 * b210 + a3 * b201) + 0.5 * (a1 * b210 + a2 * b120) +
                                0.25 * (a1 * b120 + a2 * b030 + a3 * b021));
    mid[s] = (target - known) / (1.5 * a3);
  }
  std::array<double, 3> inner{};  // ordinate at (V_i + 2C) / 3
  for (int i = 0; i < 3; ++i) inner[i] = (toward_c[i] + mid[i] + mid[(i + 2) % 3]) / 3.0;
  const double center = (inner[0] + inner[1] + inner[2]) / 3.0;

  CubicPatch p;
  for (int s = 0; s < 3; ++s) {
    const int a = s, b = (s + 1) % 3;
    auto& o = p.b[s];
    o[bidx(3, 0, 0)] = f[a];
    o[bidx(0, 3, 0)] = f[b];
    o[bidx(0, 0, 3)] = center;
    o[bidx(2, 1, 0)] = along(a, v[b]);
    o[bidx(1, 2, 0)] = along(b, v[a]);
    o[bidx(2, 0, 1)] = toward_c[a];
    o[bidx(0, 2, 1)] = toward_c[b];
    o[bidx(1, 0, 2)] = inner[a];
    o[bidx(0, 1, 2)] = inner[b];
    o[bidx(1, 1, 1)] = mid[s];
  }
  return p;
}

double eval_patch(const CubicPatch& p, const std::array<double, 3>& mu) {
  int s = 0;
  if (mu[0] <= mu[1] && mu[0] <= mu[2]) s = 1;       // opposite V0 -> (V1, V2, C)
  else if (mu[1] <= mu[0] && mu[1] <= mu[2]) s = 2;  // opposite V1 -> (V2, V0, C)
  else s = 0;                                         // opposite V2 -> (V0, V1, C)
  const int o = (s + 2) % 3;
  const double u = mu[s] - mu[o], v = mu[(s + 1) % 3] - mu[o], w = 3.0 * mu[o];
  const auto& b = p.b[s];
  return b[bidx(3, 0, 0)] * u * u * u + b[bidx(0, 3, 0)] * v * v * v + b[bidx(0, 0, 3)] * w * w * w +
         3.0 * (b[bidx(2, 1, 0)] * u * u * v + b[bidx(1, 2, 0)] * u * v * v + b[bidx(2, 0, 1)] * u * u * w +
                b[bidx(0, 2, 1)] * v * v * w + b[bidx(1, 0, 2)] * u * w * w + b[bidx(0, 1, 2)] * v * w * w) +
         6.0 * b[bidx(1, 1, 1)] * u * v * w;
}

std::vector<Vec2> estimate_gradients(const Triangulation& tri, const std::vector<double>& f) {
  const std::size_t n = tri.sites.size();
  std::vector<std::vector<std::uint32_t>> ring(n);
  for (const auto& t : tri.triangles) {
    for (int i = 0; i < 3; ++i) {
      ring[t[i]].push_back(t[(i + 1) % 3]);
      ring[t[i]].push_back(t[(i + 2) % 3]);
    }
  }
  std::vector<Vec2> grad(n, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    auto& nb = ring[i];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    double sxx = 0, sxy = 0, syy = 0, bx = 0, by = 0;
    for (std::uint32_t j : nb) {
      const double dx = tri.sites[j].x - tri.sites[i].x, dy = tri.sites[j].y - tri.sites[i].y;
      const double df = f[j] - f[i];
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
      bx += dx * df;
      by += dy * df;
    }
    const double det = sxx * syy - sxy * sxy;
    if (nb.size() >= 2 && det > 1e-12 * (sxx * syy + 1.0)) {
      grad[i] = {(syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det};
    }
  }
  return grad;
}

void require_triangles(const Triangulation& tri, InterpMethod m) {
  if (tri.triangles.empty()) {
    throw std::invalid_argument(to_string(m) + " interpolation needs at least 3 non-collinear valid pixels");
  }
}

DepthMap finalize(const DepthMap& sparse, const std::vector<double>& values, const std::vector<std::uint8_t>& covered) {
  DepthMap out(sparse.height(), sparse.width());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t r = i / sparse.width(), c = i % sparse.width();
    if (sparse.valid_at(i)) out.set(r, c, sparse.depth_at(i));
    else if (covered[i] && std::isfinite(values[i]) && values[i] > 0.0) out.set(r, c, values[i]);
  }
  return out;
}

DepthMap linear_fill(const DepthMap& sparse, const Samples& s) {
  const Triangulation tri = delaunay_triangulate(s.sites);
  require_triangles(tri, InterpMethod::kLinear);
  std::vector<double> values(sparse.size(), 0.0);
  std::vector<std::uint8_t> covered(sparse.size(), 0);
  rasterize(
      tri, sparse.height(), sparse.width(),
      [&](std::size_t t, const std::array<double, 3>& mu) {
        const auto& idx = tri.triangles[t];
        return mu[0] * s.values[idx[0]] + mu[1] * s.values[idx[1]] + mu[2] * s.values[idx[2]];
      },
      values, covered);
  return finalize(sparse, values, covered);
}

DepthMap cubic_fill(const DepthMap& sparse, const Samples& s) {
  const Triangulation tri = delaunay_triangulate(s.sites);
  require_triangles(tri, InterpMethod::kCubic);
  const std::vector<Vec2> grad = estimate_gradients(tri, s.values);
  std::vector<CubicPatch> patches;
  patches.reserve(tri.triangles.size());
  for (const auto& t : tri.triangles) {
    std::array<Vec2, 3> v{}, g{};
    std::array<double, 3> f{};
    for (int i = 0; i < 3; ++i) {
      v[i] = {static_cast<double>(tri.sites[t[i]].x), static_cast<double>(tri.sites[t[i]].y)};
      f[i] = s.values[t[i]];
      g[i] = grad[t[i]];
    }
    patches.push_back(build_patch(v, f, g));
  }
  std::vector<double> values(sparse.size(), 0.0);
  std::vector<std::uint8_t> covered(sparse.size(), 0);
  rasterize(
      tri, sparse.height(), sparse.width(),
      [&](std::size_t t, const std::array<double, 3>& mu) { return eval_patch(patches[t], mu); }, values, covered);
  return finalize(sparse, values, covered);
}

// ---------------------------------------------------------------------------
// Thin-plate spline

double tps_kernel(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }

bool collinear(const std::vector<RbfSample>& s) {
  if (s.size() < 3) return true;
  const double x0 = s[0].x, y0 = s[0].y;
  std::size_t k = 1;
  while (k < s.size() && s[k].x == x0 && s[k].y == y0) ++k;
  if (k == s.size()) return true;
  const double dx = s[k].x - x0, dy = s[k].y - y0;
  for (std::size_t i = k + 1; i < s.size(); ++i) {
    if (dx * (s[i].y - y0) - dy * (s[i].x - x0) != 0.0) return false;
  }
  return true;
}

DepthMap rbf_fill(const DepthMap& sparse, const Samples& s, const DensifyOptions& opt) {
  if (s.sites.size() < 2) throw std::invalid_argument("rbf interpolation needs at least 2 valid pixels");
  std::vector<std::size_t> chosen(s.sites.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (chosen.size() > opt.rbf_max_sites) {
    std::mt19937_64 rng(mix_seed({opt.rbf_seed, 0x7b5}));
    for (std::size_t i = 0; i < opt.rbf_max_sites; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, chosen.size() - 1);
      std::swap(chosen[i], chosen[pick(rng)]);
    }
    chosen.resize(opt.rbf_max_sites);
    std::sort(chosen.begin(), chosen.end());
  }
  std::vector<RbfSample> sites;
  for (std::size_t i : chosen) {
    sites.push_back({static_cast<double>(s.sites[i].x), static_cast<double>(s.sites[i].y), s.values[i]});
  }
  std::vector<RbfSample> queries;
  queries.reserve(sparse.size());
  for (std::size_t r = 0; r < sparse.height(); ++r) {
    for (std::size_t c = 0; c < sparse.width(); ++c) queries.push_back({static_cast<double>(c), static_cast<double>(r), 0.0});
  }
  // Keeps every pairwise distance below 1 so no kernel entry vanishes at r = 1.
  const double scale = 1.0 / (2.0 * static_cast<double>(std::max(sparse.height(), sparse.width())));
  const std::vector<double> values = thin_plate_spline(sites, queries, scale);
  return finalize(sparse, values, std::vector<std::uint8_t>(values.size(), 1));
}

}  // namespace

std::vector<double> thin_plate_spline(const std::vector<RbfSample>& sites, const std::vector<RbfSample>& queries,
                                      double coordinate_scale) {
  const std::size_t n = sites.size();
  // Collinear sites cannot pin an affine term; fall back to a constant one.
  const std::size_t poly = collinear(sites) ? 1 : 3;
  const std::size_t m = n + poly;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<long>(m), static_cast<long>(m));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<long>(m));
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = sites[i].x * coordinate_scale, yi = sites[i].y * coordinate_scale;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = xi - sites[j].x * coordinate_scale, dy = yi - sites[j].y * coordinate_scale;
      a(static_cast<long>(i), static_cast<long>(j)) = tps_kernel(dx * dx + dy * dy);
    }
    const double p[3] = {1.0, xi, yi};
    for (std::size_t k = 0; k < poly; ++k) {
      a(static_cast<long>(i), static_cast<long>(n + k)) = p[k];
      a(static_cast<long>(n + k), static_cast<long>(i)) = p[k];
    }
    rhs(static_cast<long>(i)) = sites[i].value;
  }
  const Eigen::VectorXd coef = a.partialPivLu().solve(rhs);
  std::vector<double> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double x = queries[q].x * coordinate_scale, y = queries[q].y * coordinate_scale;
    double v = coef(static_cast<long>(n));
    if (poly == 3) v += coef(static_cast<long>(n + 1)) * x + coef(static_cast<long>(n + 2)) * y;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = x - sites[i].x * coordinate_scale, dy = y - sites[i].y * coordinate_scale;
      v += coef(static_cast<long>(i)) * tps_kernel(dx * dx + dy * dy);
    }
    out[q] = v;
  }
  return out;
}

DepthMap densify(const DepthMap& sparse, InterpMethod method, const DensifyOptions& options) {
  const Samples s = collect(sparse);
  if (s.sites.empty()) throw std::invalid_argument("densify: input has no valid pixels");
  switch (method) {
    case InterpMethod::kNearest: return nearest_fill(sparse, s);
    case InterpMethod::kLinear: return linear_fill(sparse, s);
    case InterpMethod::kCubic: return cubic_fill(sparse, s);
    case InterpMethod::kRbf: return rbf_fill(sparse, s, options);
  }
  throw std::invalid_argument("densify: unknown method");
}

std::vector<BaselineResult> evaluate_baselines(const std::vector<BaselineFrame>& dataset,
                                               const std::vector<InterpMethod>& methods,
                                               const DensifyOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("evaluate_baselines: empty dataset");
  std::vector<BaselineResult> results;
  for (InterpMethod m : methods) {
    MetricAccumulator acc;
    for (const auto& f : dataset) acc.add(densify(f.sparse, m, options), f.groundtruth, f.key);
    results.push_back({m, acc.report()});
  }
  return results;
}

}  // namespace dcomp
