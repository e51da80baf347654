// SPDX-License-Identifier: Apache-2.0

#include "dcomp/delaunay.hpp"

#include <boost/polygon/voronoi.hpp>

#include <stdexcept>

namespace dcomp {

Triangulation delaunay_triangulate(std::span<const Site> sites) {
  using boost::polygon::point_data;
  Triangulation tri;
  tri.sites.assign(sites.begin(), sites.end());
  if (sites.size() < 3) return tri;

  std::vector<point_data<std::int32_t>> pts;
  pts.reserve(sites.size());
  for (const Site& s : sites) pts.emplace_back(s.x, s.y);
  boost::polygon::voronoi_diagram<double> vd;
  boost::polygon::construct_voronoi(pts.begin(), pts.end(), &vd);

  // Each Voronoi vertex is the circumcentre of one Delaunay cell; the sites
  // whose cells meet there, in rotation order, form that cell's polygon.
  std::vector<std::uint32_t> ring;
  for (const auto& v : vd.vertices()) {
    ring.clear();
    const auto* start = v.incident_edge();
    const auto* e = start;
    do {
      ring.push_back(static_cast<std::uint32_t>(e->cell()->source_index()));
      e = e->rot_next();
    } while (e != start);
    for (std::size_t i = 1; i + 1 < ring.size(); ++i) {
      std::array<std::uint32_t, 3> t{ring[0], ring[i], ring[i + 1]};
      const std::int64_t o = orient2d(tri.sites[t[0]], tri.sites[t[1]], tri.sites[t[2]]);
      if (o == 0) continue;
      if (o < 0) std::swap(t[1], t[2]);
      tri.triangles.push_back(t);
    }
  }
  return tri;
}

}  // namespace dcomp
