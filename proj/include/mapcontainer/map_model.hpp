// Copyright 2026 The Map Container Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/observation.hpp"

namespace mapcontainer {

using FeatureId = std::uint32_t;

enum class FeatureKind : std::uint8_t { Point, Line, Surface };

enum class SemanticClass : std::uint8_t {
  LampPost,
  TrafficLight,
  TrafficSign,
  LaneLine,
  Other
};

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Point: return "point";
    case FeatureKind::Line: return "line";
    case FeatureKind::Surface: return "surface";
  }
  return "?";
}

inline std::string_view to_string(SemanticClass c) {
  switch (c) {
    case SemanticClass::LampPost: return "lamp_post";
    case SemanticClass::TrafficLight: return "traffic_light";
    case SemanticClass::TrafficSign: return "traffic_sign";
    case SemanticClass::LaneLine: return "lane_line";
    case SemanticClass::Other: return "other";
  }
  return "?";
}

inline FeatureKind feature_kind_from_string(std::string_view s) {
  for (auto k : {FeatureKind::Point, FeatureKind::Line, FeatureKind::Surface}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown feature kind '" + std::string(s) + "'");
}

inline SemanticClass semantic_class_from_string(std::string_view s) {
  for (auto c : {SemanticClass::LampPost, SemanticClass::TrafficLight,
                 SemanticClass::TrafficSign, SemanticClass::LaneLine,
                 SemanticClass::Other}) {
    if (to_string(c) == s) return c;
  }
  throw ParseError("unknown semantic class '" + std::string(s) + "'");
}

inline constexpr double kDefaultLaneWidth = 0.15;
inline constexpr double kDefaultMapSigma = 0.1;
inline constexpr double kGridCellSize = 10.0;

/// Entity id under which a map feature appears in a driving state.
inline std::string feature_entity_id(FeatureId id) {
  return "feature:" + std::to_string(id);
}

struct MapFeature {
  FeatureId id = 0;
  FeatureKind kind = FeatureKind::Point;
  std::vector<Eigen::Vector3d> control_points;
  SemanticClass semantic_class = SemanticClass::Other;
  double width = kDefaultLaneWidth;  // lateral extent, surfaces only

  /// Reference point used for priors and relative observations.
  const Eigen::Vector3d& reference() const { return control_points.front(); }

  void validate() const {
    const std::string tag = "feature " + std::to_string(id);
    const std::size_t n = control_points.size();
    switch (kind) {
      case FeatureKind::Point:
        if (n != 1) throw ValidationError(tag + ": point feature needs exactly 1 control point");
        break;
      case FeatureKind::Line:
        if (n != 2) throw ValidationError(tag + ": line feature needs exactly 2 control points");
        break;
      case FeatureKind::Surface:
        if (n < 2) throw ValidationError(tag + ": surface feature needs at least 2 control points");
        break;
    }
    for (const auto& p : control_points) {
      if (!p.allFinite()) throw ValidationError(tag + ": non-finite control point");
    }
    if (!(width >= 0.0) || !std::isfinite(width)) {
      throw ValidationError(tag + ": invalid width");
    }
  }

  bool operator==(const MapFeature&) const = default;
};

struct GeodeticAnchor {
  double latitude = 0.0;
  double longitude = 0.0;
  double altitude = 0.0;
  bool operator==(const GeodeticAnchor&) const = default;
};

struct Bounds2d {
  Eigen::Vector2d min = Eigen::Vector2d::Zero();
  Eigen::Vector2d max = Eigen::Vector2d::Zero();

  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() &&
           p.y() <= max.y();
  }
  double diagonal() const { return (max - min).norm(); }
  bool operator==(const Bounds2d&) const = default;
};

/// Immutable vector HD map in a local ENU frame anchored at frame_origin.
class HdMap {
 public:
  HdMap() = default;

  HdMap(std::vector<MapFeature> features, GeodeticAnchor origin,
        std::optional<Bounds2d> bounds = std::nullopt)
      : features_(std::move(features)), origin_(origin) {
    std::sort(features_.begin(), features_.end(),
              [](const MapFeature& a, const MapFeature& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < features_.size(); ++i) {
      features_[i].validate();
      if (i > 0 && features_[i].id == features_[i - 1].id) {
        throw ValidationError("feature " + std::to_string(features_[i].id) +
                              ": duplicate id");
      }
    }
    bounds_ = bounds ? *bounds : fit_bounds(features_);
    for (const auto& f : features_) {
      for (const auto& p : f.control_points) {
        if (!bounds_.contains(p.head<2>())) {
          throw ValidationError("feature " + std::to_string(f.id) +
                                ": control point outside map bounds");
        }
      }
    }
    build_index();
  }

  const std::vector<MapFeature>& features() const { return features_; }
  const GeodeticAnchor& frame_origin() const { return origin_; }
  const Bounds2d& bounds() const { return bounds_; }
  std::size_t size() const { return features_.size(); }

  const MapFeature* find(FeatureId id) const {
    auto it = std::lower_bound(
        features_.begin(), features_.end(), id,
        [](const MapFeature& f, FeatureId v) { return f.id < v; });
    return (it != features_.end() && it->id == id) ? &*it : nullptr;
  }

  const MapFeature& at(FeatureId id) const {
    const MapFeature* f = find(id);
    if (!f) throw ValidationError("unknown feature id " + std::to_string(id));
    return *f;
  }

  std::size_t count(SemanticClass c) const {
    return std::size_t(std::count_if(features_.begin(), features_.end(),
                                     [c](const MapFeature& f) { return f.semantic_class == c; }));
  }

  /// Point and line landmarks (everything except lane surfaces).
  std::size_t landmark_count() const {
    return std::size_t(std::count_if(features_.begin(), features_.end(), [](const MapFeature& f) {
      return f.semantic_class != SemanticClass::LaneLine;
    }));
  }

  /// Features having at least one control point within radius of center,
  /// ascending id.
  std::vector<MapFeature> query(const Eigen::Vector2d& center, double radius) const {
    if (!(radius > 0.0)) throw ValidationError("query radius must be positive");
    if (features_.empty()) return {};
    const double r2 = radius * radius;
    // Clamp the cell range so huge radii do not iterate over empty space.
    auto clamp_cell = [](double v, std::int64_t lo, std::int64_t hi) {
      const double c = std::floor(v / kGridCellSize);
      return std::int64_t(std::clamp(c, double(lo), double(hi)));
    };
    const std::int64_t x0 = clamp_cell(center.x() - radius, min_cell_.first, max_cell_.first);
    const std::int64_t x1 = clamp_cell(center.x() + radius, min_cell_.first, max_cell_.first);
    const std::int64_t y0 = clamp_cell(center.y() - radius, min_cell_.second, max_cell_.second);
    const std::int64_t y1 = clamp_cell(center.y() + radius, min_cell_.second, max_cell_.second);
    std::vector<std::size_t> hits;
    for (std::int64_t cx = x0; cx <= x1; ++cx) {
      for (std::int64_t cy = y0; cy <= y1; ++cy) {
        auto it = index_.find(key(cx, cy));
        if (it == index_.end()) continue;
        for (std::size_t i : it->second) {
          for (const auto& p : features_[i].control_points) {
            if ((p.head<2>() - center).squaredNorm() <= r2) {
              hits.push_back(i);
              break;
            }
          }
        }
      }
    }
    std::sort(hits.begin(), hits.end());
    hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
    std::vector<MapFeature> out;
    out.reserve(hits.size());
    for (std::size_t i : hits) out.push_back(features_[i]);
    return out;
  }

 private:
  static Bounds2d fit_bounds(const std::vector<MapFeature>& features) {
    Bounds2d b;
    if (features.empty()) return b;
    b.min = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
    b.max = -b.min;
    for (const auto& f : features) {
      for (const auto& p : f.control_points) {
        b.min = b.min.cwiseMin(p.head<2>());
        b.max = b.max.cwiseMax(p.head<2>());
      }
    }
    b.min.array() -= 1.0;
    b.max.array() += 1.0;
    return b;
  }

  static std::pair<std::int64_t, std::int64_t> cell_of(const Eigen::Vector2d& p) {
    return {std::int64_t(std::floor(p.x() / kGridCellSize)),
            std::int64_t(std::floor(p.y() / kGridCellSize))};
  }
  static std::int64_t key(std::int64_t cx, std::int64_t cy) {
    return (cx << 32) ^ (cy & 0xffffffffLL);
  }

  void build_index() {
    index_.clear();
    min_cell_ = {0, 0};
    max_cell_ = {-1, -1};
    bool first = true;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      for (const auto& p : features_[i].control_points) {
        const auto c = cell_of(p.head<2>());
        auto& bucket = index_[key(c.first, c.second)];
        if (bucket.empty() || bucket.back() != i) bucket.push_back(i);
        if (first) {
          min_cell_ = max_cell_ = c;
          first = false;
        }
        min_cell_ = {std::min(min_cell_.first, c.first), std::min(min_cell_.second, c.second)};
        max_cell_ = {std::max(max_cell_.first, c.first), std::max(max_cell_.second, c.second)};
      }
    }
  }

  std::vector<MapFeature> features_;
  GeodeticAnchor origin_;
  Bounds2d bounds_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> index_;
  std::pair<std::int64_t, std::int64_t> min_cell_{0, 0};
  std::pair<std::int64_t, std::int64_t> max_cell_{-1, -1};
};

inline std::vector<MapFeature> query_features(const HdMap& map,
                                              const Eigen::Vector2d& center,
                                              double radius) {
  return map.query(center, radius);
}

/// Map-sensor priors (class M-F): feature reference position with isotropic
/// map accuracy sigma.
inline std::vector<ObservationRecord> map_prior_factors(const HdMap& map,
                                                        std::span<const FeatureId> ids,
                                                        double sigma = kDefaultMapSigma) {
  if (!(sigma > 0.0)) throw ValidationError("map accuracy sigma must be positive");
  std::vector<ObservationRecord> out;
  out.reserve(ids.size());
  for (FeatureId id : ids) {
    const MapFeature& f = map.at(id);
    ObservationRecord r;
    r.source = SourceClass::MapToFeature;
    r.observer = "map";
    r.subject = feature_entity_id(id);
    r.value = f.reference();
    r.covariance = Eigen::Matrix3d::Identity() * sigma * sigma;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON map document.

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline nlohmann::json map_to_json(const HdMap& map) {
  using nlohmann::json;
  json doc;
  doc["frame_origin"] = {{"latitude", map.frame_origin().latitude},
                         {"longitude", map.frame_origin().longitude},
                         {"altitude", map.frame_origin().altitude}};
  doc["bounds"] = {{"min", {round3(map.bounds().min.x()), round3(map.bounds().min.y())}},
                   {"max", {round3(map.bounds().max.x()), round3(map.bounds().max.y())}}};
  json features = json::array();
  for (const auto& f : map.features()) {
    json jf;
    jf["id"] = f.id;
    jf["kind"] = to_string(f.kind);
    jf["semantic_class"] = to_string(f.semantic_class);
    json pts = json::array();
    for (const auto& p : f.control_points) {
      pts.push_back({round3(p.x()), round3(p.y()), round3(p.z())});
    }
    jf["control_points"] = pts;
    if (f.kind == FeatureKind::Surface) jf["width"] = round3(f.width);
    features.push_back(jf);
  }
  doc["features"] = features;
  return doc;
}

inline HdMap map_from_json(const nlohmann::json& doc) {
  try {
    GeodeticAnchor origin;
    if (doc.contains("frame_origin")) {
      const auto& o = doc.at("frame_origin");
      origin.latitude = o.at("latitude").get<double>();
      origin.longitude = o.at("longitude").get<double>();
      origin.altitude = o.value("altitude", 0.0);
    }
    std::vector<MapFeature> features;
    for (const auto& jf : doc.at("features")) {
      MapFeature f;
      f.id = jf.at("id").get<FeatureId>();
      f.kind = feature_kind_from_string(jf.at("kind").get<std::string>());
      f.semantic_class =
          semantic_class_from_string(jf.value("semantic_class", std::string("other")));
      for (const auto& jp : jf.at("control_points")) {
        if (!jp.is_array() || jp.size() != 3) {
          throw ParseError("feature " + std::to_string(f.id) +
                           ": control point must be [x, y, z]");
        }
        f.control_points.emplace_back(jp[0].get<double>(), jp[1].get<double>(),
                                      jp[2].get<double>());
      }
      f.width = jf.value("width", kDefaultLaneWidth);
      features.push_back(std::move(f));
    }
    std::optional<Bounds2d> bounds;
    if (doc.contains("bounds")) {
      const auto& b = doc.at("bounds");
      Bounds2d bb;
      bb.min = {b.at("min").at(0).get<double>(), b.at("min").at(1).get<double>()};
      bb.max = {b.at("max").at(0).get<double>(), b.at("max").at(1).get<double>()};
      bounds = bb;
    }
    return HdMap(std::move(features), origin, bounds);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("map document: ") + e.what());
  }
}

inline HdMap load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open map file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("map file '" + path + "': " + e.what());
  }
  return map_from_json(doc);
}

inline void save_map(const HdMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write map file '" + path + "'");
  out << map_to_json(map).dump(2) << "\n";
}

}  // namespace mapcontainer
