#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/autodiff.hpp"
#include "geoloc/error.hpp"

namespace geoloc {

inline constexpr double kEarthRadiusMiles = 3958.8;

struct GeoPoint {
  double lon = 0.0;
  double lat = 0.0;

  bool valid() const { return lon >= -180.0 && lon <= 180.0 && lat >= -90.0 && lat <= 90.0; }
  bool operator==(const GeoPoint&) const = default;
};

enum class LabelKind { zipcode, neighborhood };

inline const char* to_string(LabelKind k) { return k == LabelKind::zipcode ? "zipcode" : "neighborhood"; }

inline LabelKind parse_label_kind(const std::string& s) {
  if (s == "zipcode") return LabelKind::zipcode;
  if (s == "neighborhood") return LabelKind::neighborhood;
  throw ConfigError("unknown label kind '" + s + "' (expected zipcode or neighborhood)");
}

// Great-circle distance on a sphere of radius kEarthRadiusMiles.
inline double haversine_miles(GeoPoint p, GeoPoint q) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (q.lat - p.lat) * rad;
  const double dlon = (q.lon - p.lon) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double a = s1 * s1 + std::cos(p.lat * rad) * std::cos(q.lat * rad) * s2 * s2;
  return 2.0 * kEarthRadiusMiles * std::asin(std::min(1.0, std::sqrt(a)));
}

// ---------------------------------------------------------------------------
// Polygons and the offline spatial labeler

// Closed ring: first point equals last.
using Ring = std::vector<GeoPoint>;

struct Polygon {
  std::vector<Ring> rings;  // rings[0] is the outer boundary, the rest are holes
};

namespace detail {

inline double cross(GeoPoint o, GeoPoint a, GeoPoint b) {
  return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
}

inline double segment_distance(GeoPoint p, GeoPoint a, GeoPoint b) {
  const double dx = b.lon - a.lon, dy = b.lat - a.lat;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.lon - (a.lon + t * dx), p.lat - (a.lat + t * dy));
}

inline bool on_segment(GeoPoint p, GeoPoint a, GeoPoint b) {
  return std::min(a.lon, b.lon) <= p.lon && p.lon <= std::max(a.lon, b.lon) && std::min(a.lat, b.lat) <= p.lat &&
         p.lat <= std::max(a.lat, b.lat);
}

inline bool segments_intersect(GeoPoint p1, GeoPoint p2, GeoPoint q1, GeoPoint q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

}  // namespace detail

inline constexpr double kBoundaryEpsilon = 1e-9;

// Throws ConfigError if a ring is open, degenerate, or self-intersecting.
inline void validate_ring(const Ring& ring, const std::string& where) {
  if (ring.size() < 4) throw ConfigError(where + ": ring needs at least 4 points (closed triangle)");
  if (!(ring.front() == ring.back())) throw ConfigError(where + ": ring is not closed (first != last)");
  for (const GeoPoint& p : ring) {
    if (!p.valid()) throw ConfigError(where + ": coordinate out of range");
  }
  const std::size_t n = ring.size() - 1;  // edge count
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (detail::segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1])) {
        throw ConfigError(where + ": ring self-intersects at edges " + std::to_string(i) + " and " +
                          std::to_string(j));
      }
    }
  }
}

// Even-odd ray crossing over all rings, so holes are excluded. Points within
// kBoundaryEpsilon degrees of any edge count as inside.
inline bool point_in_polygon(GeoPoint p, const Polygon& poly) {
  for (const Ring& ring : poly.rings) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      if (detail::segment_distance(p, ring[i], ring[i + 1]) <= kBoundaryEpsilon) return true;
    }
  }
  bool inside = false;
  for (const Ring& ring : poly.rings) {
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
      const GeoPoint a = ring[i], b = ring[j];
      if ((a.lat > p.lat) != (b.lat > p.lat)) {
        const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
        if (p.lon < x) inside = !inside;
      }
    }
  }
  return inside;
}

struct Region {
  std::string label;
  std::vector<Polygon> polygons;
};

struct RegionSet {
  LabelKind kind = LabelKind::zipcode;
  std::vector<Region> regions;
};

inline void validate(const RegionSet& set) {
  std::set<std::string> seen;
  for (const Region& r : set.regions) {
    if (!seen.insert(r.label).second) throw ConfigError("duplicate region label '" + r.label + "'");
    if (r.polygons.empty()) throw ConfigError("region '" + r.label + "' has no polygons");
    for (const Polygon& poly : r.polygons) {
      if (poly.rings.empty()) throw ConfigError("region '" + r.label + "' has an empty polygon");
      for (const Ring& ring : poly.rings) validate_ring(ring, "region '" + r.label + "'");
    }
  }
}

// First containing region in file order, or nullopt outside all regions.
inline std::optional<std::string> assign_region(GeoPoint p, const RegionSet& set) {
  for (const Region& r : set.regions) {
    for (const Polygon& poly : r.polygons) {
      if (point_in_polygon(p, poly)) return r.label;
    }
  }
  return std::nullopt;
}

namespace detail {

inline Ring ring_from_json(const nlohmann::json& j) {
  Ring ring;
  for (const auto& pt : j) {
    if (!pt.is_array() || pt.size() < 2) throw ConfigError("invalid GeoJSON position");
    ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
  }
  return ring;
}

inline Polygon polygon_from_json(const nlohmann::json& j) {
  Polygon poly;
  for (const auto& r : j) poly.rings.push_back(ring_from_json(r));
  return poly;
}

inline nlohmann::json ring_to_json(const Ring& ring) {
  nlohmann::json arr = nlohmann::json::array();
  for (const GeoPoint& p : ring) arr.push_back({p.lon, p.lat});
  return arr;
}

}  // namespace detail

// Reads a GeoJSON FeatureCollection whose features carry a `label` property
// and Polygon or MultiPolygon geometry. An optional top-level `label_kind`
// member selects zipcode or neighborhood.
inline RegionSet regions_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features")) {
    throw ConfigError("region file must be a GeoJSON FeatureCollection");
  }
  RegionSet set;
  if (doc.contains("label_kind")) set.kind = parse_label_kind(doc["label_kind"].get<std::string>());
  for (const auto& f : doc["features"]) {
    const auto& props = f.at("properties");
    if (!props.contains("label")) throw ConfigError("region feature without a 'label' property");
    Region r;
    r.label = props["label"].is_string() ? props["label"].get<std::string>() : props["label"].dump();
    const auto& geom = f.at("geometry");
    const std::string type = geom.at("type").get<std::string>();
    if (type == "Polygon") {
      r.polygons.push_back(detail::polygon_from_json(geom.at("coordinates")));
    } else if (type == "MultiPolygon") {
      for (const auto& p : geom.at("coordinates")) r.polygons.push_back(detail::polygon_from_json(p));
    } else {
      throw ConfigError("unsupported geometry type '" + type + "' for region '" + r.label + "'");
    }
    set.regions.push_back(std::move(r));
  }
  validate(set);
  return set;
}

inline RegionSet load_regions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open region file: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid region file " + path + ": " + e.what());
  }
  return regions_from_json(doc);
}

inline nlohmann::json regions_to_json(const RegionSet& set) {
  nlohmann::json features = nlohmann::json::array();
  for (const Region& r : set.regions) {
    nlohmann::json geom;
    auto poly_json = [](const Polygon& p) {
      nlohmann::json rings = nlohmann::json::array();
      for (const Ring& ring : p.rings) rings.push_back(detail::ring_to_json(ring));
      return rings;
    };
    if (r.polygons.size() == 1) {
      geom = {{"type", "Polygon"}, {"coordinates", poly_json(r.polygons[0])}};
    } else {
      nlohmann::json polys = nlohmann::json::array();
      for (const Polygon& p : r.polygons) polys.push_back(poly_json(p));
      geom = {{"type", "MultiPolygon"}, {"coordinates", polys}};
    }
    features.push_back({{"type", "Feature"}, {"properties", {{"label", r.label}}}, {"geometry", geom}});
  }
  return {{"type", "FeatureCollection"}, {"label_kind", to_string(set.kind)}, {"features", features}};
}

// ---------------------------------------------------------------------------
// Predictions and location metrics

struct Prediction {
  std::string id;
  std::optional<GeoPoint> truth_point;
  std::optional<GeoPoint> predicted_point;
  std::optional<std::string> truth_label;
  std::optional<std::string> predicted_label;
  double probability = 0.0;
  std::vector<double> distribution;  // aligned with PredictionSet::labels
};

struct PredictionSet {
  std::vector<std::string> labels;
  std::vector<Prediction> entries;
};

// Fraction of entries whose great-circle error is at most d_miles.
inline double acc_at(const PredictionSet& preds, double d_miles) {
  if (preds.entries.empty()) throw Error("acc_at on an empty prediction set");
  std::size_t hits = 0;
  for (const Prediction& p : preds.entries) {
    if (!p.truth_point || !p.predicted_point) throw Error("acc_at: entry '" + p.id + "' lacks a point");
    if (haversine_miles(*p.truth_point, *p.predicted_point) <= d_miles) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.entries.size());
}

inline double mean_error_miles(const PredictionSet& preds) {
  if (preds.entries.empty()) throw Error("mean_error_miles on an empty prediction set");
  double s = 0.0;
  for (const Prediction& p : preds.entries) {
    if (!p.truth_point || !p.predicted_point) throw Error("mean_error_miles: entry '" + p.id + "' lacks a point");
    s += haversine_miles(*p.truth_point, *p.predicted_point);
  }
  return s / static_cast<double>(preds.entries.size());
}

// FeatureCollection with a predicted Point, a truth Point, and a LineString
// joining them for every entry. Coordinates are [lon, lat].
inline nlohmann::json predictions_to_geojson(const PredictionSet& preds) {
  nlohmann::json features = nlohmann::json::array();
  auto point = [](const std::string& id, const char* role, GeoPoint p) {
    return nlohmann::json{{"type", "Feature"},
                          {"properties", {{"id", id}, {"role", role}}},
                          {"geometry", {{"type", "Point"}, {"coordinates", {p.lon, p.lat}}}}};
  };
  for (const Prediction& p : preds.entries) {
    if (!p.predicted_point) throw Error("export_geojson: entry '" + p.id + "' has no predicted point");
    features.push_back(point(p.id, "predicted", *p.predicted_point));
    if (!p.truth_point) continue;
    features.push_back(point(p.id, "truth", *p.truth_point));
    features.push_back(
        {{"type", "Feature"},
         {"properties", {{"id", p.id}, {"role", "error"}, {"miles", haversine_miles(*p.truth_point, *p.predicted_point)}}},
         {"geometry",
          {{"type", "LineString"},
           {"coordinates", {{p.predicted_point->lon, p.predicted_point->lat}, {p.truth_point->lon, p.truth_point->lat}}}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline void export_geojson(const PredictionSet& preds, const std::string& path) {
  const nlohmann::json doc = predictions_to_geojson(preds);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << doc.dump(1) << '\n';
  if (!out) throw Error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Regression loss

// Mean over rows of the Euclidean distance between pred and truth rows.
// The gradient at zero distance is taken as 0.
inline Var pairwise_loss(Var pred, Var truth) {
  if (pred.tape != truth.tape) throw Error("pairwise_loss: operands on different tapes");
  const Shape& ps = pred.shape();
  if (ps != truth.shape() || ps.size() != 2 || ps[0] == 0) {
    throw Error("pairwise_loss: shape mismatch " + shape_str(ps) + " vs " + shape_str(truth.shape()));
  }
  const std::size_t B = ps[0], k = ps[1];
  std::vector<double> dist(B);
  const Tensor& pv = pred.value();
  const Tensor& tv = truth.value();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = pv[b * k + j] - tv[b * k + j];
      s += d * d;
    }
    dist[b] = std::sqrt(s);
    total += dist[b];
  }
  return pred.tape->record(
      "pairwise_loss", Tensor::scalar(total / static_cast<double>(B)), {pred, truth},
      [pred, truth, dist = std::move(dist), B, k](Tape& t, const Tensor& g) {
        const Tensor& pv = t.value(pred);
        const Tensor& tv = t.value(truth);
        const double scale = g[0] / static_cast<double>(B);
        auto apply = [&](std::span<double> dst, double sign) {
          for (std::size_t b = 0; b < B; ++b) {
            if (dist[b] == 0.0) continue;
            for (std::size_t j = 0; j < k; ++j) {
              dst[b * k + j] += sign * scale * (pv[b * k + j] - tv[b * k + j]) / dist[b];
            }
          }
        };
        t.accumulate(pred, [&](std::span<double> gp) { apply(gp, 1.0); });
        t.accumulate(truth, [&](std::span<double> gt) { apply(gt, -1.0); });
      });
}

}  // namespace geoloc
