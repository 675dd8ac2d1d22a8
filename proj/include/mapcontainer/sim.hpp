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

// Scenario presets, sensor simulation and Monte-Carlo trials.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mapcontainer/camera_sim.hpp"
#include "mapcontainer/error.hpp"
#include "mapcontainer/estimator.hpp"
#include "mapcontainer/fusion.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_model.hpp"

namespace mapcontainer {

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (trial seed, tick, channel).
inline std::uint64_t stream_seed(std::uint64_t trial_seed, std::uint64_t tick,
                                 std::uint64_t channel) {
  return splitmix64(splitmix64(splitmix64(trial_seed) ^ tick) ^ (channel * 0x2545f4914f6cdd1dULL));
}

inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t trial) {
  return splitmix64(base_seed + trial);
}

// ---------------------------------------------------------------------------
// Scenario

enum class AgentKind { ConnectedVehicle, ObstacleVehicle, Pedestrian };

inline std::string_view to_string(AgentKind k) {
  switch (k) {
    case AgentKind::ConnectedVehicle: return "connected_vehicle";
    case AgentKind::ObstacleVehicle: return "obstacle_vehicle";
    case AgentKind::Pedestrian: return "pedestrian";
  }
  return "?";
}

inline AgentKind agent_kind_from_string(std::string_view s) {
  for (AgentKind k : {AgentKind::ConnectedVehicle, AgentKind::ObstacleVehicle,
                      AgentKind::Pedestrian}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown agent kind '" + std::string(s) + "'");
}

struct Waypoint {
  double t = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
};

struct Agent {
  std::string id;
  AgentKind kind = AgentKind::ObstacleVehicle;
  std::vector<Waypoint> trajectory;  // ascending t, linear interpolation

  VehiclePose pose_at(double t) const {
    if (trajectory.empty()) throw ValidationError("agent " + id + ": empty trajectory");
    if (t <= trajectory.front().t) return {trajectory.front().position, trajectory.front().yaw};
    if (t >= trajectory.back().t) return {trajectory.back().position, trajectory.back().yaw};
    auto it = std::upper_bound(trajectory.begin(), trajectory.end(), t,
                               [](double v, const Waypoint& w) { return v < w.t; });
    const Waypoint& b = *it;
    const Waypoint& a = *(it - 1);
    const double s = (t - a.t) / (b.t - a.t);
    VehiclePose p;
    p.position = a.position + s * (b.position - a.position);
    p.yaw = normalize_angle(a.yaw + s * normalize_angle(b.yaw - a.yaw));
    return p;
  }

  /// Half extents (length, width) of the occluding footprint.
  Eigen::Vector2d half_extent() const {
    return kind == AgentKind::Pedestrian ? Eigen::Vector2d(0.3, 0.3) : Eigen::Vector2d(2.25, 0.9);
  }

  bool connected() const { return kind == AgentKind::ConnectedVehicle; }
};

struct Scenario {
  std::string name;
  HdMap map;
  std::vector<Agent> agents;  // ascending id
  double duration = 5.0;
  double tick = 0.1;
  std::string ego;

  void validate() const {
    if (!(tick > 0.0) || !(duration >= 0.0)) throw ValidationError("scenario: bad timing");
    if (std::none_of(agents.begin(), agents.end(), [](const Agent& a) { return a.connected(); })) {
      throw ValidationError("scenario: needs at least one connected vehicle");
    }
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const Agent& a = agents[i];
      if (i > 0 && !(agents[i - 1].id < a.id)) {
        throw ValidationError("scenario: agent ids must be unique and sorted");
      }
      if (a.trajectory.empty() || a.trajectory.front().t > 0.0 ||
          a.trajectory.back().t < duration) {
        throw ValidationError("agent " + a.id + ": trajectory must cover [0, duration]");
      }
      for (std::size_t k = 1; k < a.trajectory.size(); ++k) {
        if (!(a.trajectory[k].t > a.trajectory[k - 1].t)) {
          throw ValidationError("agent " + a.id + ": waypoint times must increase");
        }
      }
    }
    const Agent* e = find(ego);
    if (!e || !e->connected()) throw ValidationError("scenario: ego must be a connected vehicle");
  }

  const Agent* find(const std::string& id) const {
    for (const auto& a : agents) {
      if (a.id == id) return &a;
    }
    return nullptr;
  }

  std::vector<std::string> connected_ids() const {
    std::vector<std::string> out;
    for (const auto& a : agents) {
      if (a.connected()) out.push_back(a.id);
    }
    return out;
  }

  std::size_t obstacle_count() const {
    return std::size_t(std::count_if(agents.begin(), agents.end(),
                                     [](const Agent& a) { return !a.connected(); }));
  }

  int tick_count() const { return int(std::floor(duration / tick + 1e-9)) + 1; }
};

enum class Preset { Urban, Suburban, Overlap, BlindSpot1, BlindSpot2 };

inline constexpr Preset kAllPresets[] = {Preset::Urban, Preset::Suburban, Preset::Overlap,
                                         Preset::BlindSpot1, Preset::BlindSpot2};

inline std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::Urban: return "urban";
    case Preset::Suburban: return "suburban";
    case Preset::Overlap: return "overlap";
    case Preset::BlindSpot1: return "blindspot1";
    case Preset::BlindSpot2: return "blindspot2";
  }
  return "?";
}

inline Preset preset_from_string(std::string_view s) {
  for (Preset p : kAllPresets) {
    if (to_string(p) == s) return p;
  }
  throw ValidationError("unknown preset '" + std::string(s) + "'");
}

namespace detail {

// Straight three-marking road along +x with landmarks on both verges.
inline HdMap road_map(bool dense) {
  std::vector<MapFeature> f;
  FeatureId lane_id = 1;
  for (double y : {-3.5, 0.0, 3.5}) {
    MapFeature lane{lane_id++, FeatureKind::Surface, {}, SemanticClass::LaneLine};
    for (double x = 0.0; x <= 300.0 + 1e-9; x += 10.0) lane.control_points.emplace_back(x, y, 0.0);
    f.push_back(std::move(lane));
  }
  for (int k = 0; k < 14; ++k) {
    if (!dense && k % 2 == 1) continue;
    const double x = 10.0 + 20.0 * k;
    const double y = k % 2 == 0 ? 7.0 : -7.0;
    f.push_back({FeatureId(100 + k), FeatureKind::Line, {{x, y, 0.0}, {x, y, 6.0}},
                 SemanticClass::LampPost});
  }
  const double lights[] = {55.0, 125.0, 195.0, 265.0};
  const double signs[] = {35.0, 95.0, 165.0, 235.0};
  for (int k = 0; k < 4; ++k) {
    if (!dense && k % 2 == 1) continue;
    const double side = k % 2 == 0 ? -1.0 : 1.0;
    f.push_back({FeatureId(200 + k), FeatureKind::Point, {{lights[k], 5.5 * side, 5.0}},
                 SemanticClass::TrafficLight});
    f.push_back({FeatureId(300 + k), FeatureKind::Point, {{signs[k], -6.0 * side, 2.5}},
                 SemanticClass::TrafficSign});
  }
  return HdMap(std::move(f), GeodeticAnchor{40.0, 116.3, 50.0},
               Bounds2d{{-10.0, -20.0}, {310.0, 20.0}});
}

inline Agent straight_agent(const std::string& id, AgentKind kind, double x, double y,
                            double speed, double duration) {
  Agent a;
  a.id = id;
  a.kind = kind;
  const double yaw = speed < 0.0 ? kPi : 0.0;
  a.trajectory.push_back({0.0, {x, y, 0.0}, yaw});
  a.trajectory.push_back({duration, {x + speed * duration, y, 0.0}, yaw});
  return a;
}

}  // namespace detail

inline Scenario build_preset(Preset p) {
  Scenario s;
  s.name = std::string(to_string(p));
  s.duration = 5.0;
  s.tick = 0.1;
  s.ego = "cv0";
  const double T = s.duration;
  using detail::straight_agent;
  constexpr auto CV = AgentKind::ConnectedVehicle;
  constexpr auto OV = AgentKind::ObstacleVehicle;
  constexpr auto PED = AgentKind::Pedestrian;
  switch (p) {
    case Preset::Urban:
    case Preset::Suburban: {
      s.map = detail::road_map(p == Preset::Urban);
      s.agents = {
          straight_agent("cv0", CV, 20.0, -1.75, 10.0, T),
          straight_agent("cv1", CV, 40.0, 1.75, 9.0, T),
          straight_agent("cv2", CV, 60.0, -1.75, 10.0, T),
          straight_agent("cv3", CV, 85.0, 1.75, 8.0, T),
          straight_agent("ov0", OV, 30.0, 1.75, 9.0, T),
          straight_agent("ov1", OV, 50.0, -1.75, 10.0, T),
          straight_agent("ov2", OV, 75.0, 1.75, 8.5, T),
          straight_agent("ov3", OV, 95.0, -1.75, 10.0, T),
          straight_agent("ov4", OV, 110.0, 1.75, 8.0, T),
          straight_agent("ov5", OV, 5.0, -1.75, 11.0, T),
          straight_agent("ped0", PED, 25.0, 5.0, 1.2, T),
          straight_agent("ped1", PED, 45.0, -5.0, -1.2, T),
          straight_agent("ped2", PED, 60.0, 5.0, 1.0, T),
          straight_agent("ped3", PED, 80.0, -5.0, 1.4, T),
          straight_agent("ped4", PED, 100.0, 5.0, -1.1, T),
          straight_agent("ped5", PED, 120.0, -5.0, 1.2, T),
          straight_agent("ped6", PED, 35.0, -5.0, 1.3, T),
          straight_agent("ped7", PED, 70.0, 5.0, -1.0, T),
      };
      break;
    }
    case Preset::Overlap:
      // Target ahead in the ego lane, also seen by the connected vehicle in
      // the adjacent lane.
      s.map = detail::road_map(true);
      s.agents = {straight_agent("cv0", CV, 20.0, -1.75, 10.0, T),
                  straight_agent("cv1", CV, 32.0, 1.75, 10.0, T),
                  straight_agent("tgt", OV, 44.0, -1.75, 10.0, T)};
      break;
    case Preset::BlindSpot1:
      // Connected vehicle directly ahead of the ego hides the target.
      s.map = detail::road_map(true);
      s.agents = {straight_agent("cv0", CV, 20.0, -1.75, 10.0, T),
                  straight_agent("cv1", CV, 30.0, -1.75, 10.0, T),
                  straight_agent("tgt", OV, 42.0, -1.75, 10.0, T)};
      break;
    case Preset::BlindSpot2:
      // Connected vehicle and target both beyond the ego perception range.
      s.map = detail::road_map(true);
      s.agents = {straight_agent("cv0", CV, 20.0, -1.75, 10.0, T),
                  straight_agent("cv1", CV, 85.0, 1.75, 10.0, T),
                  straight_agent("tgt", OV, 100.0, -1.75, 10.0, T)};
      break;
  }
  std::sort(s.agents.begin(), s.agents.end(),
            [](const Agent& a, const Agent& b) { return a.id < b.id; });
  s.validate();
  return s;
}

inline Scenario build_preset(std::string_view name) { return build_preset(preset_from_string(name)); }

// ---------------------------------------------------------------------------
// Scenario documents

inline nlohmann::json scenario_to_json(const Scenario& s) {
  using nlohmann::json;
  json doc;
  doc["name"] = s.name;
  doc["duration"] = s.duration;
  doc["tick"] = s.tick;
  doc["ego"] = s.ego;
  doc["map"] = map_to_json(s.map);
  json agents = json::array();
  for (const auto& a : s.agents) {
    json ja;
    ja["id"] = a.id;
    ja["kind"] = to_string(a.kind);
    json wps = json::array();
    for (const auto& w : a.trajectory) {
      wps.push_back({round3(w.t), round3(w.position.x()), round3(w.position.y()),
                     round3(w.position.z()), std::round(w.yaw * 1e6) / 1e6});
    }
    ja["trajectory"] = wps;
    agents.push_back(ja);
  }
  doc["agents"] = agents;
  return doc;
}

inline Scenario scenario_from_json(const nlohmann::json& doc) {
  try {
    Scenario s;
    s.name = doc.value("name", std::string("custom"));
    s.duration = doc.at("duration").get<double>();
    s.tick = doc.value("tick", 0.1);
    s.map = map_from_json(doc.at("map"));
    for (const auto& ja : doc.at("agents")) {
      Agent a;
      a.id = ja.at("id").get<std::string>();
      a.kind = agent_kind_from_string(ja.at("kind").get<std::string>());
      for (const auto& w : ja.at("trajectory")) {
        if (!w.is_array() || w.size() != 5) {
          throw ParseError("agent " + a.id + ": waypoint must be [t, x, y, z, yaw]");
        }
        a.trajectory.push_back({w[0].get<double>(),
                                {w[1].get<double>(), w[2].get<double>(), w[3].get<double>()},
                                w[4].get<double>()});
      }
      s.agents.push_back(std::move(a));
    }
    std::sort(s.agents.begin(), s.agents.end(),
              [](const Agent& a, const Agent& b) { return a.id < b.id; });
    s.ego = doc.value("ego", s.connected_ids().empty() ? std::string() : s.connected_ids().front());
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sensors

struct GnssModel {
  double sigma = 1.5;
  double bias_walk_sigma = 0.0;  // m / sqrt(s); off by default
};

struct PerceptionModel {
  double range = 50.0;
  double fov_deg = 360.0;
  double sigma = 0.3;
  bool occlusion = true;
};

struct CameraModel {
  CameraIntrinsics intrinsics{};
  double height = 1.5;  // mount above the vehicle origin
  double pixel_sigma = 1.0;
  double range = 60.0;
  double lane_outlier_ratio = 0.0;
  bool enabled = true;
};

struct CommModel {
  int latency_ticks = 0;
  double drop_probability = 0.0;
};

struct SensorSuite {
  GnssModel gnss;
  PerceptionModel perception;
  CameraModel camera;
  CommModel comm;
  double init_position_sigma = 0.3;  // pose guess handed to the estimators
  double init_yaw_sigma_deg = 0.5;
  double covariance_floor = 1e-3;    // sigma used in covariances when the noise is zero

  static SensorSuite noiseless() {
    SensorSuite s;
    s.gnss.sigma = 0.0;
    s.perception.sigma = 0.0;
    s.camera.pixel_sigma = 0.0;
    s.init_position_sigma = 0.0;
    s.init_yaw_sigma_deg = 0.0;
    return s;
  }

  void validate() const {
    for (double v : {gnss.sigma, gnss.bias_walk_sigma, perception.sigma, camera.pixel_sigma,
                     init_position_sigma, init_yaw_sigma_deg}) {
      if (!(v >= 0.0)) throw ValidationError("sensor suite: noise sigmas must be >= 0");
    }
    if (!(perception.range > 0.0) || !(camera.range > 0.0)) {
      throw ValidationError("sensor suite: ranges must be positive");
    }
    if (!(perception.fov_deg > 0.0 && perception.fov_deg <= 360.0)) {
      throw ValidationError("sensor suite: FOV must lie in (0, 360]");
    }
    if (!(covariance_floor > 0.0)) throw ValidationError("sensor suite: covariance floor must be > 0");
    if (!(comm.drop_probability >= 0.0 && comm.drop_probability <= 1.0) || comm.latency_ticks < 0) {
      throw ValidationError("sensor suite: invalid communication model");
    }
    camera.intrinsics.validate();
  }
};

/// True when segment a-b passes through the rectangle (center c, heading yaw,
/// half extents h).
inline bool segment_hits_rectangle(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                   const Eigen::Vector2d& c, double yaw, const Eigen::Vector2d& h) {
  const Eigen::Matrix2d Rt = detail::planar_rotation_t(yaw);
  const Eigen::Vector2d p = Rt * (a - c);
  const Eigen::Vector2d d = Rt * (b - a);
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d(k)) < 1e-15) {
      if (p(k) < -h(k) || p(k) > h(k)) return false;
      continue;
    }
    double ta = (-h(k) - p(k)) / d(k);
    double tb = (h(k) - p(k)) / d(k);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

/// Whether observer can perceive target at t: range, FOV and rectangle
/// occlusion by every other agent.
inline bool perceives(const Scenario& sc, const Agent& observer, const Agent& target, double t,
                      const PerceptionModel& m) {
  const VehiclePose o = observer.pose_at(t);
  const VehiclePose g = target.pose_at(t);
  const Eigen::Vector2d d = g.position.head<2>() - o.position.head<2>();
  if (d.norm() > m.range) return false;
  const Eigen::Vector2d body = detail::planar_rotation_t(o.yaw) * d;
  if (std::abs(std::atan2(body.y(), body.x())) > 0.5 * deg_to_rad(m.fov_deg) + 1e-12) return false;
  if (!m.occlusion) return true;
  for (const auto& other : sc.agents) {
    if (other.id == observer.id || other.id == target.id) continue;
    const VehiclePose p = other.pose_at(t);
    if (segment_hits_rectangle(o.position.head<2>(), g.position.head<2>(), p.position.head<2>(),
                               p.yaw, other.half_extent())) {
      return false;
    }
  }
  return true;
}

namespace detail {

inline Eigen::MatrixXd isotropic(int dim, double sigma, double floor) {
  const double s = std::max(sigma, floor);
  return Eigen::MatrixXd::Identity(dim, dim) * s * s;
}

}  // namespace detail

/// One vehicle's observations at t. Draw order is fixed: GNSS, pose guess,
/// relative observations (ascending agent id), camera features.
inline VehicleSensing sense(const Scenario& sc, const std::string& vehicle, double t,
                            const SensorSuite& suite, std::mt19937_64& rng,
                            const Eigen::Vector2d& gnss_bias = Eigen::Vector2d::Zero()) {
  const Agent* self = sc.find(vehicle);
  if (!self || !self->connected()) throw ValidationError("sense: '" + vehicle + "' is not connected");
  std::normal_distribution<double> n01(0.0, 1.0);
  const VehiclePose truth = self->pose_at(t);
  VehicleSensing s;
  s.vehicle = vehicle;
  s.timestamp = t;
  s.camera = suite.camera.intrinsics;
  s.camera_height = suite.camera.height;

  ObservationRecord g;
  g.source = SourceClass::Gnss;
  g.observer = g.subject = vehicle;
  g.timestamp = t;
  g.value = truth.position.head<2>() + gnss_bias;
  g.value(0) += suite.gnss.sigma * n01(rng);
  g.value(1) += suite.gnss.sigma * n01(rng);
  g.covariance = detail::isotropic(2, suite.gnss.sigma, suite.covariance_floor);
  s.records.push_back(g);

  s.pose_guess = truth;
  s.pose_guess.position.x() += suite.init_position_sigma * n01(rng);
  s.pose_guess.position.y() += suite.init_position_sigma * n01(rng);
  s.pose_guess.yaw = normalize_angle(truth.yaw + deg_to_rad(suite.init_yaw_sigma_deg) * n01(rng));

  const Eigen::Matrix2d Rt = detail::planar_rotation_t(truth.yaw);
  for (const auto& other : sc.agents) {
    if (other.id == vehicle || !perceives(sc, *self, other, t, suite.perception)) continue;
    ObservationRecord r;
    r.source = other.connected() ? SourceClass::VehicleToVehicle : SourceClass::VehicleToObstacle;
    r.observer = vehicle;
    r.subject = other.id;
    r.timestamp = t;
    r.value = Rt * (other.pose_at(t).position.head<2>() - truth.position.head<2>());
    r.value(0) += suite.perception.sigma * n01(rng);
    r.value(1) += suite.perception.sigma * n01(rng);
    r.covariance = detail::isotropic(2, suite.perception.sigma, suite.covariance_floor);
    s.records.push_back(r);
  }

  if (suite.camera.enabled) {
    CameraSimOptions cam;
    cam.pixel_sigma = suite.camera.pixel_sigma;
    cam.range = suite.camera.range;
    cam.lane_outlier_ratio = suite.camera.lane_outlier_ratio;
    const auto nearby = sc.map.query(truth.position.head<2>(), suite.camera.range + 15.0);
    s.features = render_features(nearby, camera_pose_of(truth, suite.camera.height),
                                 suite.camera.intrinsics, cam, &rng);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Trials

struct TrialConfig {
  FusionConfig fusion{};
  std::string perspective;  // whose view single-vehicle modes report; empty = ego
};

/// Fusion defaults used by the simulator: the pose guess is within a few
/// decimetres, so a wider association gate than the single-frame default.
inline FusionConfig simulation_fusion_config(FusionMode mode, const SensorSuite& suite) {
  FusionConfig c;
  c.mode = mode;
  c.matching.gate_px = 60.0;
  c.matching.camera_height = suite.camera.height;
  c.pixel_sigma = suite.camera.pixel_sigma;
  c.sigma_floor = suite.covariance_floor;
  return c;
}

struct TickEntry {
  std::string id;
  bool connected = false;
  Eigen::Vector3d truth = Eigen::Vector3d::Zero();
  std::optional<Eigen::Vector3d> estimate;
  bool visible = false;  // perceived by at least one connected vehicle (targets)
};

struct TickResult {
  int index = 0;
  double t = 0.0;
  bool failed = false;
  std::string error;
  VehiclePose perspective_truth;
  std::vector<TickEntry> entries;
  std::size_t bytes = 0;
  std::size_t matching_failures = 0;
};

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  FusionMode mode = FusionMode::Distributed;
  std::string perspective;
  std::vector<TickResult> ticks;

  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& t : ticks) b += t.bytes;
    return b;
  }
  int failed_ticks() const {
    return int(std::count_if(ticks.begin(), ticks.end(), [](const TickResult& t) { return t.failed; }));
  }
};

/// One trial: every tick all connected vehicles sense, then the configured
/// architecture produces the estimate recorded from the perspective vehicle.
inline TrialResult run_trial(const Scenario& sc, const SensorSuite& suite, const TrialConfig& cfg,
                             std::uint64_t seed, std::size_t trial_index = 0) {
  sc.validate();
  suite.validate();
  cfg.fusion.validate();
  TrialResult out;
  out.trial = trial_index;
  out.seed = seed;
  out.mode = cfg.fusion.mode;
  out.perspective = cfg.perspective.empty() ? sc.ego : cfg.perspective;
  const Agent* view = sc.find(out.perspective);
  if (!view || !view->connected()) {
    throw ValidationError("perspective '" + out.perspective + "' is not a connected vehicle");
  }
  const auto connected = sc.connected_ids();
  std::map<std::string, Eigen::Vector2d> bias;
  for (const auto& id : connected) bias[id] = Eigen::Vector2d::Zero();
  std::deque<std::vector<FusionMessage>> in_flight;

  for (int k = 0; k < sc.tick_count(); ++k) {
    const double t = k * sc.tick;
    TickResult tick;
    tick.index = k;
    tick.t = t;
    tick.perspective_truth = view->pose_at(t);

    std::vector<VehicleSensing> sensing;
    for (std::size_t v = 0; v < connected.size(); ++v) {
      std::mt19937_64 rng(stream_seed(seed, std::uint64_t(k), v + 1));
      if (suite.gnss.bias_walk_sigma > 0.0 && k > 0) {
        std::normal_distribution<double> n01(0.0, 1.0);
        const double step = suite.gnss.bias_walk_sigma * std::sqrt(sc.tick);
        bias[connected[v]] += Eigen::Vector2d(step * n01(rng), step * n01(rng));
      }
      sensing.push_back(sense(sc, connected[v], t, suite, rng, bias[connected[v]]));
    }

    std::map<std::string, VehiclePose> self_est;
    std::optional<DrivingState> view_state;
    try {
      FusionConfig fc = cfg.fusion;
      switch (fc.mode) {
        case FusionMode::GnssOnly:
        case FusionMode::Local: {
          for (const auto& s : sensing) {
            const LocalResult r = local_estimate(s, sc.map, fc);
            if (!r.matching_error.empty()) ++tick.matching_failures;
            self_est[s.vehicle] = r.state.vehicles.at(s.vehicle);
            if (s.vehicle == out.perspective) view_state = r.state;
          }
          break;
        }
        case FusionMode::Distributed: {
          std::vector<FusionMessage> sent;
          std::mt19937_64 comm_rng(stream_seed(seed, std::uint64_t(k), 0));
          std::uniform_real_distribution<double> u01(0.0, 1.0);
          const VehicleSensing* host = nullptr;
          for (const auto& s : sensing) {
            if (s.vehicle == sc.ego) {
              host = &s;
              continue;
            }
            const LocalResult r = local_estimate(s, sc.map, fc);
            if (!r.matching_error.empty()) ++tick.matching_failures;
            tick.bytes += r.message.payload_size;
            if (u01(comm_rng) >= suite.comm.drop_probability) sent.push_back(r.message);
          }
          in_flight.push_back(std::move(sent));
          std::vector<FusionMessage> inbox;
          if (in_flight.size() > std::size_t(suite.comm.latency_ticks)) {
            inbox = std::move(in_flight.front());
            in_flight.pop_front();
          }
          const FusedResult r = host_fuse(*host, inbox, sc.map, fc);
          tick.matching_failures += r.matching_failures;
          for (const auto& [id, v] : r.state.vehicles) self_est[id] = v;
          view_state = r.state;
          break;
        }
        case FusionMode::Centralized: {
          for (const auto& s : sensing) {
            if (s.vehicle != sc.ego) tick.bytes += serialize(s).size();
          }
          const FusedResult r = centralized_fuse(sensing, sc.map, fc);
          tick.matching_failures += r.matching_failures;
          for (const auto& [id, v] : r.state.vehicles) self_est[id] = v;
          view_state = r.state;
          break;
        }
      }
    } catch (const Error& e) {
      tick.failed = true;
      tick.error = e.what();
      self_est.clear();
      view_state.reset();
    }

    for (const auto& a : sc.agents) {
      TickEntry e;
      e.id = a.id;
      e.connected = a.connected();
      e.truth = a.pose_at(t).position;
      if (a.connected()) {
        e.visible = true;
        if (auto it = self_est.find(a.id); it != self_est.end()) e.estimate = it->second.position;
      } else {
        for (const auto& id : connected) {
          if (perceives(sc, *sc.find(id), a, t, suite.perception)) {
            e.visible = true;
            break;
          }
        }
        if (view_state) {
          if (auto it = view_state->obstacles.find(a.id); it != view_state->obstacles.end()) {
            e.estimate = it->second;
          }
        }
      }
      tick.entries.push_back(std::move(e));
    }
    out.ticks.push_back(std::move(tick));
  }
  return out;
}

/// M independent trials; trial j uses seed splitmix64(base_seed + j).
inline std::vector<TrialResult> run_monte_carlo(const Scenario& sc, const SensorSuite& suite,
                                                const TrialConfig& cfg, std::size_t trials,
                                                std::uint64_t base_seed) {
  if (trials < 1) throw ValidationError("Monte Carlo needs at least one trial");
  std::vector<TrialResult> out;
  out.reserve(trials);
  for (std::size_t j = 0; j < trials; ++j) {
    out.push_back(run_trial(sc, suite, cfg, trial_seed(base_seed, j), j));
  }
  return out;
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// One row per (trial, tick, state id).
inline std::string trials_csv(const std::vector<TrialResult>& trials) {
  std::ostringstream os;
  os << "trial,tick,t,mode,id,role,visible,has_estimate,truth_x,truth_y,truth_z,est_x,est_y,"
        "est_z\n";
  for (const auto& tr : trials) {
    for (const auto& tick : tr.ticks) {
      for (const auto& e : tick.entries) {
        os << tr.trial << ',' << tick.index << ',' << detail::fixed(tick.t, 3) << ','
           << to_string(tr.mode) << ',' << e.id << ',' << (e.connected ? "self" : "target") << ','
           << int(e.visible) << ',' << int(e.estimate.has_value()) << ','
           << detail::fixed(e.truth.x()) << ',' << detail::fixed(e.truth.y()) << ','
           << detail::fixed(e.truth.z());
        if (e.estimate) {
          os << ',' << detail::fixed(e.estimate->x()) << ',' << detail::fixed(e.estimate->y())
             << ',' << detail::fixed(e.estimate->z());
        } else {
          os << ",,,";
        }
        os << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace mapcontainer
