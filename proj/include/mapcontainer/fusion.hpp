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

// Cooperative fusion architectures. In distributed mode every connected
// vehicle solves its own sub-problem and transmits Gaussian priors plus a
// selected set of raw observations; the host refines the global state from
// those. The centralized baseline ships everything raw to one solver.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/estimator.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_matching.hpp"
#include "mapcontainer/map_model.hpp"
#include "mapcontainer/observation.hpp"
#include "mapcontainer/wire.hpp"

namespace mapcontainer {

enum class FusionMode { GnssOnly, Local, Distributed, Centralized };

inline constexpr FusionMode kAllFusionModes[] = {FusionMode::GnssOnly, FusionMode::Local,
                                                 FusionMode::Distributed,
                                                 FusionMode::Centralized};

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::GnssOnly: return "gnss_only";
    case FusionMode::Local: return "local";
    case FusionMode::Distributed: return "distributed";
    case FusionMode::Centralized: return "centralized";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(std::string_view s) {
  for (FusionMode m : kAllFusionModes) {
    if (to_string(m) == s) return m;
  }
  throw ParseError("unknown fusion mode '" + std::string(s) + "'");
}

struct SharePolicy {
  // Classes forwarded verbatim. The sender re-solves without them before
  // summarizing, so nothing reaches the host twice.
  std::set<SourceClass> raw{SourceClass::VehicleToObstacle, SourceClass::VehicleToVehicle};
  bool share_pose_prior = true;
  bool share_entity_priors = true;  // obstacles/vehicles still observable without raw classes
};

struct FusionConfig {
  FusionMode mode = FusionMode::Distributed;
  double window = 0.1;        // observations within a window share one state snapshot
  double stale_after = 0.2;   // messages older than this are rejected by the host
  SharePolicy share;
  bool use_map_matching = true;
  MatchingOptions matching{};
  double pixel_sigma = 1.0;   // detection noise used to scale the matching covariance
  double sigma_floor = 1e-3;  // keeps covariances definite in noiseless runs
  // Map-matching poses whose planar position disagrees with the vehicle's own
  // GNSS fix beyond this squared Mahalanobis distance are discarded (2 dof,
  // 99.99%). Zero disables the check.
  double gnss_gate_chi2 = 18.4207;
  EstimatorOptions estimator{};

  void validate() const {
    if (!(window > 0.0)) throw ValidationError("fusion: window must be positive");
    if (!(stale_after > 0.0)) throw ValidationError("fusion: staleness window must be positive");
    if (!(gnss_gate_chi2 >= 0.0)) throw ValidationError("fusion: GNSS gate must be >= 0");
    matching.validate();
  }
};

/// Everything one vehicle knows at one tick.
struct VehicleSensing {
  std::string vehicle;
  double timestamp = 0.0;
  std::vector<ObservationRecord> records;  // G, V-O, V-V, V-F
  std::optional<RecognizedFeatures> features;
  VehiclePose pose_guess;                  // initial value (e.g. previous estimate)
  CameraIntrinsics camera;
  double camera_height = 1.5;              // camera mount above the vehicle origin
};

struct LocalEstimate {
  std::string subject;
  Eigen::VectorXd mean;          // full entity vector (6 for vehicles, 3 otherwise)
  ComponentMask components = 0;  // components the covariance covers
  Eigen::MatrixXd covariance;
  bool operator==(const LocalEstimate& o) const {
    return subject == o.subject && components == o.components && mean == o.mean &&
           covariance == o.covariance;
  }
};

struct FusionMessage {
  std::string sender;
  double timestamp = 0.0;
  std::vector<LocalEstimate> local_estimates;
  std::vector<ObservationRecord> shared_observations;
  std::size_t payload_size = 0;  // serialized length in bytes
};

// ---------------------------------------------------------------------------
// Wire format. All integers little-endian, strings u16-length-prefixed,
// symmetric matrices as row-major upper triangles of f64.
//
// message := "MCFM" u16 version str sender f64 timestamp
//            u32 n_estimates { str subject u8 size f64[size] mean u8 mask
//                              f64[k(k+1)/2] covariance }
//            u32 n_records record*
// record  := u8 class str observer str subject f64 timestamp u8 mask u8 dim
//            f64[dim] value f64[dim(dim+1)/2] covariance
// bundle  := "MCRB" u16 version str vehicle f64 timestamp f64[6] pose_guess
//            f64[4] fx fy cx cy u16 width u16 height f64 camera_height
//            u32 n_records record* u8 has_features
//            [u32 n_points { u8 class f64 u f64 v }
//             u32 n_lines  { u8 class f64[4] endpoints f64 outlier_ratio }
//             u32 n_regions { u8 class u16 w u16 h u32 n_runs u32[n_runs] }]
// Region masks are run-length encoded, runs alternate starting with zeros.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kWireVersion = 1;

namespace detail {

inline void write_record(ByteWriter& w, const ObservationRecord& r) {
  w.u8(std::uint8_t(r.source));
  w.str(r.observer);
  w.str(r.subject);
  w.f64(r.timestamp);
  w.u8(r.components);
  w.u8(std::uint8_t(r.value.size()));
  for (Eigen::Index i = 0; i < r.value.size(); ++i) w.f64(r.value(i));
  w.symmetric(r.covariance);
}

inline ObservationRecord read_record(ByteReader& rd) {
  ObservationRecord r;
  const std::uint8_t cls = rd.u8();
  if (cls > std::uint8_t(SourceClass::Prior)) throw ParseError("wire: bad observation class");
  r.source = SourceClass(cls);
  r.observer = rd.str();
  r.subject = rd.str();
  r.timestamp = rd.f64();
  r.components = rd.u8();
  const int dim = rd.u8();
  r.value.resize(dim);
  for (int i = 0; i < dim; ++i) r.value(i) = rd.f64();
  r.covariance = rd.symmetric(dim);
  return r;
}

inline void expect_magic(ByteReader& rd, std::string_view magic) {
  if (rd.bytes(4) != magic) throw ParseError("wire: bad magic, expected " + std::string(magic));
  if (rd.u16() != kWireVersion) throw ParseError("wire: unsupported version");
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const FusionMessage& m) {
  ByteWriter w;
  w.bytes("MCFM");
  w.u16(kWireVersion);
  w.str(m.sender);
  w.f64(m.timestamp);
  w.u32(std::uint32_t(m.local_estimates.size()));
  for (const auto& e : m.local_estimates) {
    w.str(e.subject);
    w.u8(std::uint8_t(e.mean.size()));
    for (Eigen::Index i = 0; i < e.mean.size(); ++i) w.f64(e.mean(i));
    w.u8(e.components);
    w.symmetric(e.covariance);
  }
  w.u32(std::uint32_t(m.shared_observations.size()));
  for (const auto& r : m.shared_observations) detail::write_record(w, r);
  return w.take();
}

inline FusionMessage deserialize_message(const std::vector<std::uint8_t>& buf) {
  ByteReader rd(buf);
  detail::expect_magic(rd, "MCFM");
  FusionMessage m;
  m.sender = rd.str();
  m.timestamp = rd.f64();
  const std::uint32_t ne = rd.u32();
  for (std::uint32_t i = 0; i < ne; ++i) {
    LocalEstimate e;
    e.subject = rd.str();
    const int size = rd.u8();
    e.mean.resize(size);
    for (int k = 0; k < size; ++k) e.mean(k) = rd.f64();
    e.components = rd.u8();
    e.covariance = rd.symmetric(component_count(e.components));
    m.local_estimates.push_back(std::move(e));
  }
  const std::uint32_t nr = rd.u32();
  for (std::uint32_t i = 0; i < nr; ++i) m.shared_observations.push_back(detail::read_record(rd));
  if (!rd.done()) throw ParseError("wire: trailing bytes after message");
  m.payload_size = buf.size();
  return m;
}

inline std::vector<std::uint32_t> encode_runs(const BinaryMask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t n = 0;
  for (std::uint8_t c : mask.cells) {
    const std::uint8_t b = c ? 1 : 0;
    if (b != current) {
      runs.push_back(n);
      n = 0;
      current = b;
    }
    ++n;
  }
  runs.push_back(n);
  return runs;
}

inline BinaryMask decode_runs(int width, int height, const std::vector<std::uint32_t>& runs) {
  BinaryMask mask(width, height);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t n : runs) {
    if (pos + n > mask.cells.size()) throw ParseError("wire: region runs overflow the mask");
    std::fill_n(mask.cells.begin() + std::ptrdiff_t(pos), n, value);
    pos += n;
    value ^= 1;
  }
  if (pos != mask.cells.size()) throw ParseError("wire: region runs do not cover the mask");
  return mask;
}

inline std::vector<std::uint8_t> serialize(const VehicleSensing& s) {
  ByteWriter w;
  w.bytes("MCRB");
  w.u16(kWireVersion);
  w.str(s.vehicle);
  w.f64(s.timestamp);
  const Vector6d g = s.pose_guess.to_vector();
  for (int i = 0; i < 6; ++i) w.f64(g(i));
  w.f64(s.camera.fx);
  w.f64(s.camera.fy);
  w.f64(s.camera.cx);
  w.f64(s.camera.cy);
  w.u16(std::uint16_t(s.camera.width));
  w.u16(std::uint16_t(s.camera.height));
  w.f64(s.camera_height);
  w.u32(std::uint32_t(s.records.size()));
  for (const auto& r : s.records) detail::write_record(w, r);
  w.u8(s.features ? 1 : 0);
  if (s.features) {
    const auto& f = *s.features;
    w.u32(std::uint32_t(f.points.size()));
    for (const auto& p : f.points) {
      w.u8(std::uint8_t(p.semantic_class));
      w.f64(p.uv.x());
      w.f64(p.uv.y());
    }
    w.u32(std::uint32_t(f.lines.size()));
    for (const auto& l : f.lines) {
      w.u8(std::uint8_t(l.semantic_class));
      w.f64(l.line.m1.x());
      w.f64(l.line.m1.y());
      w.f64(l.line.m2.x());
      w.f64(l.line.m2.y());
      w.f64(l.outlier_ratio);
    }
    w.u32(std::uint32_t(f.regions.size()));
    for (const auto& r : f.regions) {
      w.u8(std::uint8_t(r.semantic_class));
      w.u16(std::uint16_t(r.mask.width));
      w.u16(std::uint16_t(r.mask.height));
      const auto runs = encode_runs(r.mask);
      w.u32(std::uint32_t(runs.size()));
      for (std::uint32_t n : runs) w.u32(n);
    }
  }
  return w.take();
}

inline VehicleSensing deserialize_bundle(const std::vector<std::uint8_t>& buf) {
  ByteReader rd(buf);
  detail::expect_magic(rd, "MCRB");
  VehicleSensing s;
  s.vehicle = rd.str();
  s.timestamp = rd.f64();
  Vector6d g;
  for (int i = 0; i < 6; ++i) g(i) = rd.f64();
  s.pose_guess = VehiclePose::from_vector(g);
  s.camera.fx = rd.f64();
  s.camera.fy = rd.f64();
  s.camera.cx = rd.f64();
  s.camera.cy = rd.f64();
  s.camera.width = rd.u16();
  s.camera.height = rd.u16();
  s.camera_height = rd.f64();
  const std::uint32_t nr = rd.u32();
  for (std::uint32_t i = 0; i < nr; ++i) s.records.push_back(detail::read_record(rd));
  if (rd.u8()) {
    RecognizedFeatures f;
    const std::uint32_t np = rd.u32();
    for (std::uint32_t i = 0; i < np; ++i) {
      RecognizedPoint p;
      p.semantic_class = SemanticClass(rd.u8());
      p.uv.x() = rd.f64();
      p.uv.y() = rd.f64();
      f.points.push_back(p);
    }
    const std::uint32_t nl = rd.u32();
    for (std::uint32_t i = 0; i < nl; ++i) {
      RecognizedLine l;
      l.semantic_class = SemanticClass(rd.u8());
      l.line.m1.x() = rd.f64();
      l.line.m1.y() = rd.f64();
      l.line.m2.x() = rd.f64();
      l.line.m2.y() = rd.f64();
      l.outlier_ratio = rd.f64();
      f.lines.push_back(l);
    }
    const std::uint32_t ng = rd.u32();
    for (std::uint32_t i = 0; i < ng; ++i) {
      RecognizedRegion r;
      r.semantic_class = SemanticClass(rd.u8());
      const int w = rd.u16();
      const int h = rd.u16();
      std::vector<std::uint32_t> runs(rd.u32());
      for (auto& n : runs) n = rd.u32();
      r.mask = decode_runs(w, h, runs);
      f.regions.push_back(std::move(r));
    }
    s.features = std::move(f);
  }
  if (!rd.done()) throw ParseError("wire: trailing bytes after bundle");
  return s;
}

// ---------------------------------------------------------------------------

/// Camera pose of a vehicle whose camera sits camera_height above its origin,
/// looking along the vehicle heading.
inline CameraPose camera_pose_of(const VehiclePose& v, double camera_height) {
  CameraPose c;
  c.center = v.position +
             body_to_map_rotation(v.yaw, v.pitch, v.roll) * Eigen::Vector3d(0, 0, camera_height);
  c.yaw = v.yaw;
  c.pitch = v.pitch;
  c.roll = v.roll;
  return c;
}

inline VehiclePose vehicle_pose_of(const CameraPose& c, double camera_height) {
  VehiclePose v;
  v.position = c.center -
               body_to_map_rotation(c.yaw, c.pitch, c.roll) * Eigen::Vector3d(0, 0, camera_height);
  v.yaw = c.yaw;
  v.pitch = c.pitch;
  v.roll = c.roll;
  return v;
}

/// M-V pseudo-measurement from single-frame map matching. Covariance is
/// sigma_px^2 (J^T J)^-1 mapped through the camera-to-vehicle offset.
inline ObservationRecord map_vehicle_factor(const VehicleSensing& s, const HdMap& map,
                                            const FusionConfig& cfg,
                                            MatchingReport* report = nullptr) {
  if (!s.features) throw ValidationError("map matching: vehicle has no recognized features");
  const CameraPose guess = camera_pose_of(s.pose_guess, s.camera_height);
  const PoseEstimate est = estimate_pose(map, *s.features, guess, s.camera, cfg.matching);
  if (report) *report = est.report;
  const double sigma = std::max(cfg.pixel_sigma, cfg.sigma_floor);
  const Matrix6d cam_cov = sigma * sigma * est.report.information.inverse();

  // Jacobian of the camera -> vehicle conversion by central differences.
  auto convert = [&](const Eigen::VectorXd& c) -> Eigen::VectorXd {
    return vehicle_pose_of(CameraPose::from_vector(c), s.camera_height).to_vector();
  };
  const Eigen::MatrixXd T = numeric_jacobian(convert, est.pose.to_vector(), 1e-7);
  Matrix6d cov = T * cam_cov * T.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();

  ObservationRecord r;
  r.source = SourceClass::MapToVehicle;
  r.observer = r.subject = s.vehicle;
  r.timestamp = s.timestamp;
  r.components = kPoseComponents;
  r.value = vehicle_pose_of(est.pose, s.camera_height).to_vector();
  r.covariance = cov;
  if (!is_symmetric_positive_definite(r.covariance)) {
    throw NumericError("map matching: pose covariance not positive definite");
  }
  return r;
}

inline ObservationRecord prior_record(const std::string& sender, double timestamp,
                                      const LocalEstimate& e) {
  ObservationRecord r;
  r.source = SourceClass::Prior;
  r.observer = sender;
  r.subject = e.subject;
  r.timestamp = timestamp;
  r.components = e.components;
  const auto idx = mask_indices(e.components);
  r.value.resize(Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) r.value(Eigen::Index(k)) = e.mean(idx[k]);
  r.covariance = e.covariance;
  return r;
}

/// Initial state: known vehicle guesses, then received prior means, then
/// subjects reachable through relative observations from an initialized
/// observer. Records whose entities cannot be initialized are dropped.
struct InitialGuess {
  DrivingState state;
  std::vector<ObservationRecord> usable;
  std::size_t dropped = 0;
};

inline InitialGuess build_initial_state(const std::map<std::string, VehiclePose>& known,
                                        const std::vector<ObservationRecord>& records,
                                        const std::map<std::string, LocalEstimate>& means,
                                        const HdMap* map, double timestamp) {
  InitialGuess g;
  g.state.timestamp = timestamp;
  g.state.vehicles = known;
  auto entity_known = [&](const std::string& id) { return g.state.has(id); };
  // Received means first: they seed vehicles and obstacles alike.
  for (const auto& [id, e] : means) {
    if (entity_known(id)) continue;
    if (e.mean.size() == 6) {
      g.state.vehicles[id] = VehiclePose::from_vector(e.mean);
    } else {
      g.state.obstacles[id] = e.mean;
    }
  }
  // Feature entities from the map.
  for (const auto& r : records) {
    if ((r.source == SourceClass::VehicleToFeature || r.source == SourceClass::MapToFeature) &&
        !entity_known(r.subject) && map) {
      if (r.subject.rfind("feature:", 0) == 0) {
        const FeatureId id = FeatureId(std::stoul(r.subject.substr(8)));
        if (const MapFeature* f = map->find(id)) g.state.features[r.subject] = f->reference();
      }
    }
  }
  bool progress = true;
  while (progress) {
    progress = false;
    for (const auto& r : records) {
      if (!is_relative(r.source) || entity_known(r.subject)) continue;
      auto it = g.state.vehicles.find(r.observer);
      if (it == g.state.vehicles.end()) continue;
      const VehiclePose& o = it->second;
      const double c = std::cos(o.yaw), s = std::sin(o.yaw);
      Eigen::Vector3d p(o.position.x() + c * r.value(0) - s * r.value(1),
                        o.position.y() + s * r.value(0) + c * r.value(1), 0.0);
      if (r.source == SourceClass::VehicleToVehicle) {
        VehiclePose v;
        v.position = p;
        v.position.z() = o.position.z();
        v.yaw = o.yaw;
        g.state.vehicles[r.subject] = v;
      } else if (r.source == SourceClass::VehicleToObstacle) {
        g.state.obstacles[r.subject] = p;
      }
      progress = true;
    }
  }
  for (const auto& r : records) {
    const bool observer_needed = r.source != SourceClass::MapToFeature &&
                                 r.source != SourceClass::Prior;
    const bool subject_needed = r.source != SourceClass::Gnss &&
                                r.source != SourceClass::MapToVehicle;
    if ((observer_needed && !entity_known(r.observer)) ||
        (subject_needed && !entity_known(r.subject))) {
      ++g.dropped;
      continue;
    }
    g.usable.push_back(r);
  }
  return g;
}

struct LocalResult {
  DrivingState state;
  EstimatorReport report;
  FusionMessage message;
  std::optional<MatchingReport> matching;
  std::string matching_error;  // non-empty when map matching failed (GNSS-only fallback)
};

struct FusedResult {
  DrivingState state;
  EstimatorReport report;
  std::size_t stale_rejected = 0;
  std::size_t dropped_records = 0;
  std::size_t matching_failures = 0;
};

namespace detail {

inline bool has_self_localization(const std::vector<ObservationRecord>& records,
                                  const std::string& id) {
  return std::any_of(records.begin(), records.end(), [&](const ObservationRecord& r) {
    return (r.source == SourceClass::Gnss || r.source == SourceClass::MapToVehicle) &&
           r.observer == id;
  });
}

// Vehicle's own raw records plus its map-matching factor when available.
inline std::vector<ObservationRecord> own_factors(const VehicleSensing& s, const HdMap& map,
                                                  const FusionConfig& cfg,
                                                  std::optional<MatchingReport>* matching,
                                                  std::string* error) {
  std::vector<ObservationRecord> out;
  for (const auto& r : s.records) {
    if (cfg.mode == FusionMode::GnssOnly && !(r.source == SourceClass::Gnss ||
                                              r.source == SourceClass::VehicleToObstacle)) {
      continue;
    }
    out.push_back(r);
  }
  if (cfg.use_map_matching && cfg.mode != FusionMode::GnssOnly && s.features) {
    try {
      MatchingReport rep;
      ObservationRecord mv = map_vehicle_factor(s, map, cfg, &rep);
      if (matching) *matching = rep;
      if (cfg.gnss_gate_chi2 > 0.0) {
        for (const auto& g : out) {
          if (g.source != SourceClass::Gnss || g.observer != s.vehicle) continue;
          const Eigen::Vector2d d = mv.value.head<2>() - g.value;
          const Eigen::Matrix2d S = mv.covariance.topLeftCorner<2, 2>() + g.covariance;
          const double d2 = d.dot(S.ldlt().solve(d));
          if (!(d2 <= cfg.gnss_gate_chi2)) {
            throw ValidationError("map matching rejected: pose inconsistent with GNSS");
          }
        }
      }
      out.push_back(std::move(mv));
    } catch (const Error& e) {
      if (error) *error = e.what();
    }
  }
  return out;
}

inline JointEstimate solve_records(const std::map<std::string, VehiclePose>& known,
                                   const std::vector<ObservationRecord>& records,
                                   const std::map<std::string, LocalEstimate>& means,
                                   const HdMap& map, double timestamp, const FusionConfig& cfg,
                                   std::size_t* dropped, FactorGraph* graph_out = nullptr) {
  InitialGuess init = build_initial_state(known, records, means, &map, timestamp);
  if (dropped) *dropped = init.dropped;
  FactorGraph graph(init.state);
  graph.add(init.usable);
  JointEstimate est = solve_joint(graph, init.state, cfg.estimator);
  if (graph_out) *graph_out = std::move(graph);
  return est;
}

}  // namespace detail

/// Per-vehicle estimate of its own pose and the obstacles it observes, and
/// the message it would publish.
inline LocalResult local_estimate(const VehicleSensing& s, const HdMap& map,
                                  const FusionConfig& cfg) {
  cfg.validate();
  LocalResult out;
  const auto records = detail::own_factors(s, map, cfg, &out.matching, &out.matching_error);
  if (!detail::has_self_localization(records, s.vehicle)) {
    throw EstimatorError("vehicle " + s.vehicle + " has no GNSS or map-matching factor");
  }
  const std::map<std::string, VehiclePose> known{{s.vehicle, s.pose_guess}};
  JointEstimate full = detail::solve_records(known, records, {}, map, s.timestamp, cfg, nullptr);
  out.state = full.state;
  out.report = full.report;

  FusionMessage& m = out.message;
  m.sender = s.vehicle;
  m.timestamp = s.timestamp;
  std::vector<ObservationRecord> kept;
  for (const auto& r : records) {
    if (cfg.share.raw.contains(r.source)) {
      m.shared_observations.push_back(r);
    } else {
      kept.push_back(r);
    }
  }
  if (cfg.share.share_pose_prior || cfg.share.share_entity_priors) {
    FactorGraph graph;
    const JointEstimate reduced = detail::solve_records(
        {{s.vehicle, full.state.vehicles.at(s.vehicle)}}, kept, {}, map, s.timestamp, cfg,
        nullptr, &graph);
    const auto marginals = marginal_covariance(graph, reduced.state);
    const StateLayout& layout = graph.layout();
    const Eigen::VectorXd x = layout.flatten(reduced.state);
    for (const auto& [id, block] : marginals) {
      const bool own = id == s.vehicle;
      if (own ? !cfg.share.share_pose_prior : !cfg.share.share_entity_priors) continue;
      if (layout.at(id).kind == StateLayout::Kind::Feature) continue;
      const auto& e = layout.at(id);
      m.local_estimates.push_back({id, x.segment(e.offset, e.size), block.components,
                                   block.covariance});
    }
  }
  m.payload_size = serialize(m).size();
  return out;
}

/// Host-side refinement from its own observations and received messages.
inline FusedResult host_fuse(const VehicleSensing& host, std::vector<FusionMessage> inbox,
                             const HdMap& map, const FusionConfig& cfg) {
  cfg.validate();
  FusedResult out;
  std::optional<MatchingReport> matching;
  std::string error;
  std::vector<ObservationRecord> records = detail::own_factors(host, map, cfg, &matching, &error);
  if (!error.empty()) ++out.matching_failures;
  if (!detail::has_self_localization(records, host.vehicle)) {
    throw EstimatorError("host " + host.vehicle + " has no GNSS or map-matching factor");
  }
  // Canonical order so the result does not depend on arrival order.
  std::sort(inbox.begin(), inbox.end(), [](const FusionMessage& a, const FusionMessage& b) {
    return std::tie(a.sender, a.timestamp) < std::tie(b.sender, b.timestamp);
  });
  std::map<std::string, LocalEstimate> means;
  for (const auto& m : inbox) {
    if (std::abs(m.timestamp - host.timestamp) > cfg.stale_after + 1e-9 ||
        m.sender == host.vehicle) {
      ++out.stale_rejected;
      continue;
    }
    for (const auto& e : m.local_estimates) {
      records.push_back(prior_record(m.sender, m.timestamp, e));
      means.try_emplace(e.subject, e);
    }
    records.insert(records.end(), m.shared_observations.begin(), m.shared_observations.end());
  }
  const std::map<std::string, VehiclePose> known{{host.vehicle, host.pose_guess}};
  JointEstimate est = detail::solve_records(known, records, means, map, host.timestamp, cfg,
                                            &out.dropped_records);
  out.state = est.state;
  out.report = est.report;
  return out;
}

/// Centralized baseline: all raw data (including recognized image features)
/// reaches one node, which localizes every vehicle against the map and
/// solves a single joint problem.
inline FusedResult centralized_fuse(const std::vector<VehicleSensing>& all, const HdMap& map,
                                    const FusionConfig& cfg) {
  cfg.validate();
  if (all.empty()) throw ValidationError("centralized fusion: no vehicles");
  FusedResult out;
  std::vector<ObservationRecord> records;
  std::map<std::string, VehiclePose> known;
  for (const auto& s : all) {
    std::string error;
    auto own = detail::own_factors(s, map, cfg, nullptr, &error);
    if (!error.empty()) ++out.matching_failures;
    records.insert(records.end(), own.begin(), own.end());
    known.emplace(s.vehicle, s.pose_guess);
  }
  for (const auto& [id, pose] : known) {
    if (!detail::has_self_localization(records, id)) {
      throw EstimatorError("vehicle " + id + " has no GNSS or map-matching factor");
    }
  }
  JointEstimate est = detail::solve_records(known, records, {}, map, all.front().timestamp, cfg,
                                            &out.dropped_records);
  out.state = est.state;
  out.report = est.report;
  return out;
}

}  // namespace mapcontainer
