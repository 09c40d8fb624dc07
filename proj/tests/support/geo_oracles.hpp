#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "geoloc/geo.hpp"
#include "geoloc/rng.hpp"

// Independent reference implementations used to check the geo module.
namespace geoloc::testing {

// Great-circle distance by the spherical law of cosines.
inline double law_of_cosines_miles(GeoPoint p, GeoPoint q) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double c = std::sin(p.lat * rad) * std::sin(q.lat * rad) +
                   std::cos(p.lat * rad) * std::cos(q.lat * rad) * std::cos((q.lon - p.lon) * rad);
  return kEarthRadiusMiles * std::acos(std::clamp(c, -1.0, 1.0));
}

// Winding number of a closed ring around p (non-zero means inside).
inline int winding_number(GeoPoint p, const Ring& ring) {
  int wn = 0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const GeoPoint a = ring[i], b = ring[i + 1];
    const double side = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
    if (a.lat <= p.lat) {
      if (b.lat > p.lat && side > 0) ++wn;
    } else if (b.lat <= p.lat && side < 0) {
      --wn;
    }
  }
  return wn;
}

inline bool winding_inside(GeoPoint p, const Polygon& poly) {
  if (winding_number(p, poly.rings.front()) == 0) return false;
  for (std::size_t h = 1; h < poly.rings.size(); ++h) {
    if (winding_number(p, poly.rings[h]) != 0) return false;
  }
  return true;
}

inline double distance_to_boundary(GeoPoint p, const Polygon& poly) {
  double best = 1e300;
  for (const Ring& ring : poly.rings) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      const GeoPoint a = ring[i], b = ring[i + 1];
      const double dx = b.lon - a.lon, dy = b.lat - a.lat;
      const double len2 = dx * dx + dy * dy;
      const double t = len2 > 0 ? std::clamp(((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2, 0.0, 1.0) : 0.0;
      best = std::min(best, std::hypot(p.lon - (a.lon + t * dx), p.lat - (a.lat + t * dy)));
    }
  }
  return best;
}

// Random simple polygon: star-shaped around (cx, cy) with sorted angles and
// random radii; optionally with a smaller star-shaped hole at the centre.
inline Polygon random_star_polygon(Rng& rng, double cx, double cy, std::size_t vertices, bool with_hole) {
  auto star = [&](double r_lo, double r_hi, std::size_t n) {
    std::vector<double> angles(n);
    for (double& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    Ring ring;
    for (double a : angles) {
      const double r = rng.uniform(r_lo, r_hi);
      ring.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    ring.push_back(ring.front());
    return ring;
  };
  Polygon poly;
  poly.rings.push_back(star(0.5, 1.5, vertices));
  if (with_hole) poly.rings.push_back(star(0.1, 0.3, std::max<std::size_t>(3, vertices / 2)));
  return poly;
}

}  // namespace geoloc::testing
