// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dcomp/interp.hpp"
#include "dcomp/metrics.hpp"
#include "dcomp/synth.hpp"
#include "test_util.hpp"

namespace dcomp {
namespace {

struct Pt {
  long r, c;
  double v;
};

std::vector<Pt> points_of(const DepthMap& m) {
  std::vector<Pt> p;
  for (std::size_t r = 0; r < m.height(); ++r)
    for (std::size_t c = 0; c < m.width(); ++c)
      if (m.valid(r, c)) p.push_back({static_cast<long>(r), static_cast<long>(c), m.depth(r, c)});
  return p;
}

// All-pairs nearest site with the (distance, row, col) tie-break, scanning
// the sites in the given order.
DepthMap brute_nearest(const DepthMap& m, std::vector<Pt> pts) {
  DepthMap out(m.height(), m.width());
  for (long r = 0; r < static_cast<long>(m.height()); ++r)
    for (long c = 0; c < static_cast<long>(m.width()); ++c) {
      const Pt* best = nullptr;
      long bd = 0;
      for (const Pt& p : pts) {
        const long d = (p.r - r) * (p.r - r) + (p.c - c) * (p.c - c);
        if (!best || d < bd || (d == bd && (p.r < best->r || (p.r == best->r && p.c < best->c)))) {
          best = &p;
          bd = d;
        }
      }
      out.set(r, c, best->v);
    }
  return out;
}

// Closed convex hull membership via Andrew's monotone chain.
std::vector<Pt> hull_of(std::vector<Pt> p) {
  std::sort(p.begin(), p.end(), [](const Pt& a, const Pt& b) { return a.r < b.r || (a.r == b.r && a.c < b.c); });
  auto cross = [](const Pt& o, const Pt& a, const Pt& b) { return (a.r - o.r) * (b.c - o.c) - (a.c - o.c) * (b.r - o.r); };
  std::vector<Pt> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

bool in_hull(const std::vector<Pt>& h, long r, long c) {
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Pt& a = h[i];
    const Pt& b = h[(i + 1) % h.size()];
    if ((b.r - a.r) * (c - a.c) - (b.c - a.c) * (r - a.r) < 0) return false;
  }
  return true;
}

void expect_inputs_kept(const DepthMap& in, const DepthMap& out, double tol) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!in.valid_at(i)) continue;
    ASSERT_TRUE(out.valid_at(i));
    EXPECT_NEAR(out.depth_at(i), in.depth_at(i), tol);
  }
}

TEST(Nearest, SinglePointGivesConstant) {
  DepthMap m(9, 11);
  m.set(4, 7, 3.25);
  const DepthMap d = densify(m, InterpMethod::kNearest);
  EXPECT_TRUE(d.fully_valid());
  for (double v : d.depths()) EXPECT_EQ(v, 3.25);
}

TEST(Nearest, TwoPointsWithTieBreak) {
  DepthMap m(8, 8);
  m.set(1, 1, 5.0);
  m.set(5, 5, 9.0);  // pixels on the bisector go to the smaller row
  const DepthMap d = densify(m, InterpMethod::kNearest);
  EXPECT_EQ(d, brute_nearest(m, points_of(m)));
  EXPECT_EQ(d.depth(3, 3), 5.0);
  EXPECT_EQ(d.depth(1, 5), 5.0);
  DepthMap m2(5, 5);
  m2.set(2, 0, 1.0);
  m2.set(2, 4, 2.0);
  EXPECT_EQ(densify(m2, InterpMethod::kNearest).depth(0, 2), 1.0);  // same row: smaller column
}

TEST(Nearest, MatchesBruteForceAndIgnoresEnumerationOrder) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 30; ++t) {
    const std::size_t h = 5 + rng() % 40, w = 5 + rng() % 40;
    const double density = t % 3 == 0 ? 0.003 : 0.05;
    DepthMap m = test::random_sparse(rng, h, w, density);
    if (m.valid_count() == 0) m.set(0, 0, 2.0);
    auto pts = points_of(m);
    const DepthMap d = densify(m, InterpMethod::kNearest);
    EXPECT_TRUE(d.fully_valid());
    EXPECT_EQ(d, brute_nearest(m, pts));
    std::shuffle(pts.begin(), pts.end(), rng);
    EXPECT_EQ(d, brute_nearest(m, pts));
  }
}

TEST(Densify, FullInputIsIdentity) {
  const DepthMap g = synth_scene(SceneConfig{}, 3).depth;
  for (InterpMethod m : {InterpMethod::kNearest, InterpMethod::kLinear, InterpMethod::kCubic}) {
    EXPECT_EQ(densify(g, m), g) << to_string(m);
  }
  // TPS on 4096 pixels subsamples sites, so only the site pixels are exact
  // by construction; every input pixel is still written back verbatim.
  EXPECT_EQ(densify(g, InterpMethod::kRbf), g);
}

TEST(Densify, InputPixelsUnchanged) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 10; ++t) {
    const DepthMap m = test::random_sparse(rng, 32, 40, 0.05);
    for (InterpMethod method :
         {InterpMethod::kNearest, InterpMethod::kLinear, InterpMethod::kCubic, InterpMethod::kRbf}) {
      expect_inputs_kept(m, densify(m, method), method == InterpMethod::kRbf ? 1e-6 : 1e-9);
    }
  }
}

TEST(Densify, RbfInterpolatesItsSites) {
  // Below the site cap every valid pixel is a TPS centre, so the fit itself
  // (not just the write-back) must reproduce the data.
  std::mt19937_64 rng(23);
  std::vector<RbfSample> sites;
  std::uniform_real_distribution<double> u(0.0, 50.0), d(1.0, 60.0);
  for (int i = 0; i < 150; ++i) sites.push_back({std::floor(u(rng)), std::floor(u(rng)), d(rng)});
  std::sort(sites.begin(), sites.end(), [](auto& a, auto& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); });
  sites.erase(std::unique(sites.begin(), sites.end(), [](auto& a, auto& b) { return a.x == b.x && a.y == b.y; }),
              sites.end());
  const auto at_sites = thin_plate_spline(sites, sites, 1.0 / 100.0);
  for (std::size_t i = 0; i < sites.size(); ++i) EXPECT_NEAR(at_sites[i], sites[i].value, 1e-6);
}

TEST(Densify, HullCoverage) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 10; ++t) {
    const DepthMap m = test::random_sparse(rng, 30, 37, 0.02);
    if (m.valid_count() < 3) continue;
    const auto hull = hull_of(points_of(m));
    if (hull.size() < 3) continue;
    for (InterpMethod method : {InterpMethod::kLinear, InterpMethod::kCubic}) {
      const DepthMap d = densify(m, method);
      for (long r = 0; r < 30; ++r)
        for (long c = 0; c < 37; ++c) EXPECT_EQ(d.valid(r, c), in_hull(hull, r, c)) << to_string(method);
    }
    // Rbf is evaluated everywhere; only a nonpositive spline value (overshoot
    // on rough data) leaves a pixel invalid.
    std::vector<RbfSample> sites, queries;
    for (long r = 0; r < 30; ++r)
      for (long c = 0; c < 37; ++c) {
        queries.push_back({double(c), double(r), 0.0});
        if (m.valid(r, c)) sites.push_back({double(c), double(r), m.depth(r, c)});
      }
    const std::vector<double> tps = thin_plate_spline(sites, queries, 1.0 / 74.0);
    const DepthMap d = densify(m, InterpMethod::kRbf);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.valid_at(i), m.valid_at(i) || tps[i] > 0.0) << i;
  }
}

TEST(Densify, ReproducesAffineData) {
  // Linear and Clough-Tocher interpolants and TPS with its affine term are
  // all exact on affine data.
  std::mt19937_64 rng(25);
  const std::size_t h = 40, w = 48;
  auto f = [](double r, double c) { return 10.0 + 0.13 * r - 0.07 * c; };
  DepthMap m(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (u(rng) < 0.06) m.set(r, c, f(r, c));
  for (InterpMethod method : {InterpMethod::kLinear, InterpMethod::kCubic, InterpMethod::kRbf}) {
    const DepthMap d = densify(m, method);
    double worst = 0.0;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        if (d.valid(r, c)) worst = std::max(worst, std::abs(d.depth(r, c) - f(r, c)));
    EXPECT_LE(worst, method == InterpMethod::kRbf ? 1e-6 : 1e-9) << to_string(method);
  }
}

TEST(Densify, CubicIsSmootherThanLinearOnCurvedData) {
  // On a smooth non-affine surface the C1 interpolant should be closer to
  // the truth than the piecewise-linear one.
  const std::size_t h = 48, w = 48;
  auto f = [](double r, double c) { return 20.0 + 5.0 * std::sin(r / 9.0) * std::cos(c / 11.0); };
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DepthMap m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (u(rng) < 0.08) m.set(r, c, f(r, c));
  auto err = [&](const DepthMap& d) {
    double s = 0.0;
    std::size_t n = 0;
    const DepthMap lin = densify(m, InterpMethod::kLinear);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        if (lin.valid(r, c)) {
          s += std::pow(d.depth(r, c) - f(r, c), 2);
          ++n;
        }
    return std::sqrt(s / n);
  };
  EXPECT_LT(err(densify(m, InterpMethod::kCubic)), err(densify(m, InterpMethod::kLinear)));
}

TEST(Densify, TooFewPointsRejected) {
  DepthMap empty(5, 5);
  for (InterpMethod m : {InterpMethod::kNearest, InterpMethod::kLinear, InterpMethod::kCubic, InterpMethod::kRbf}) {
    EXPECT_THROW(densify(empty, m), std::invalid_argument);
  }
  DepthMap one(5, 5);
  one.set(2, 2, 1.0);
  EXPECT_THROW(densify(one, InterpMethod::kRbf), std::invalid_argument);
  DepthMap line(5, 5);
  for (std::size_t i = 0; i < 5; ++i) line.set(i, i, 1.0 + i);
  EXPECT_THROW(densify(line, InterpMethod::kLinear), std::invalid_argument);
  EXPECT_THROW(densify(line, InterpMethod::kCubic), std::invalid_argument);
  EXPECT_TRUE(densify(line, InterpMethod::kRbf).fully_valid());
  EXPECT_THROW(parse_interp_method("bicubic"), std::invalid_argument);
}

TEST(Baselines, NearestOnOwnGroundtruthIsExact) {
  std::vector<BaselineFrame> ds;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const DepthMap g = quantize_to_png_grid(synth_scene(SceneConfig{}, s).depth);
    ds.push_back({"f" + std::to_string(s), g, g});
  }
  const auto res = evaluate_baselines(ds, {InterpMethod::kNearest});
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].report.rmse_mm, 0.0);
  EXPECT_EQ(res[0].report.mae_mm, 0.0);
  EXPECT_EQ(res[0].report.irmse_per_km, 0.0);
  EXPECT_EQ(res[0].report.imae_per_km, 0.0);
}

TEST(Baselines, OutsideHullGivesInfiniteInverseMetrics) {
  const DepthMap g = synth_scene(SceneConfig{}, 4).depth;
  const DepthMap sp = sparsify(g, 0.05, 4);
  const auto res = evaluate_baselines({{"f", sp, g}}, {InterpMethod::kNearest, InterpMethod::kLinear,
                                                       InterpMethod::kCubic, InterpMethod::kRbf});
  ASSERT_EQ(res.size(), 4u);
  EXPECT_TRUE(std::isfinite(res[0].report.irmse_per_km));
  EXPECT_TRUE(std::isinf(res[1].report.irmse_per_km));
  EXPECT_TRUE(std::isinf(res[1].report.imae_per_km));
  EXPECT_TRUE(std::isinf(res[2].report.irmse_per_km));
  EXPECT_TRUE(std::isfinite(res[0].report.rmse_mm));
  EXPECT_THROW(evaluate_baselines({}, {InterpMethod::kNearest}), std::invalid_argument);
}

}  // namespace
}  // namespace dcomp
