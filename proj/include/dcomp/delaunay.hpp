// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dcomp {

/// Integer lattice site; x is the column, y the row.
struct Site {
  std::int32_t x;
  std::int32_t y;
  bool operator==(const Site&) const = default;
};

/// Twice the signed area of (a, b, c); positive for counter-clockwise order
/// in a y-up frame. Exact for pixel coordinates.
inline std::int64_t orient2d(const Site& a, const Site& b, const Site& c) {
  return static_cast<std::int64_t>(b.x - a.x) * (c.y - a.y) - static_cast<std::int64_t>(b.y - a.y) * (c.x - a.x);
}

struct Triangulation {
  std::vector<Site> sites;
  /// Vertex indices with orient2d > 0.
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

/// Delaunay triangulation of distinct sites. Cocircular configurations are
/// split by fanning the shared circumcircle polygon. Collinear input yields
/// no triangles.
Triangulation delaunay_triangulate(std::span<const Site> sites);

}  // namespace dcomp
