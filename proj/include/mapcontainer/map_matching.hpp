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

// Camera pose estimation against the vector map: projected map landmarks are
// registered to recognized image points, lines and lane regions, with a soft
// ground constraint on pitch, roll and camera height.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_model.hpp"
#include "mapcontainer/solver.hpp"

namespace mapcontainer {

struct RecognizedPoint {
  ImagePoint uv = ImagePoint::Zero();
  SemanticClass semantic_class = SemanticClass::Other;
};

struct RecognizedLine {
  ImageLine line;
  SemanticClass semantic_class = SemanticClass::Other;
  double outlier_ratio = 0.0;  // fraction of fit outliers reported by the detector
};

struct RecognizedRegion {
  BinaryMask mask;
  SemanticClass semantic_class = SemanticClass::LaneLine;
};

struct RecognizedFeatures {
  std::vector<RecognizedPoint> points;
  std::vector<RecognizedLine> lines;
  std::vector<RecognizedRegion> regions;

  std::size_t size() const { return points.size() + lines.size() + regions.size(); }

  void validate(const CameraIntrinsics& K) const {
    for (const auto& p : points) {
      if (!p.uv.allFinite()) throw ValidationError("recognized point: non-finite");
    }
    for (const auto& l : lines) {
      if (!l.line.m1.allFinite() || !l.line.m2.allFinite() || l.line.length() <= kMinLineLength) {
        throw ValidationError("recognized line: degenerate or non-finite");
      }
    }
    for (const auto& r : regions) {
      if (r.mask.width != K.width || r.mask.height != K.height) {
        throw ValidationError("recognized region: mask size differs from camera image");
      }
    }
  }
};

struct MapLineRef {
  FeatureId feature = 0;
  int segment = 0;
  auto operator<=>(const MapLineRef&) const = default;
};

struct Correspondences {
  std::vector<std::pair<MapLineRef, std::size_t>> lines;
  std::vector<std::pair<FeatureId, std::size_t>> points;

  std::size_t size() const { return lines.size() + points.size(); }
  bool operator==(const Correspondences&) const = default;
};

struct MatchingOptions {
  double lambda_n = 0.001;              // ground-constraint weight (cm / degree units)
  double camera_height = 1.5;           // H: camera height above the lane surface (m)
  double gate_px = 20.0;                // association gate
  double outlier_ratio_threshold = 0.3; // T_outlier
  int max_iterations = 50;              // LM budget across association rounds
  int max_rounds = 10;
  double query_radius = 80.0;           // landmark pre-selection radius (m)
  double near_clip = 1.0;               // minimum camera depth (m)
  double max_depth = 80.0;
  double region_spacing = 1.0;          // lane resampling for region residuals (m)
  double ground_height_fallback = 0.0;  // used when the map has no lane points nearby
  double rank_tolerance = 1e-12;        // relative eigenvalue floor of J^T J
  SolverOptions solver{};

  void validate() const {
    if (!(lambda_n >= 0.0)) throw ValidationError("matching: lambda_n must be >= 0");
    if (!(outlier_ratio_threshold > 0.0 && outlier_ratio_threshold < 1.0)) {
      throw ValidationError("matching: T_outlier must lie in (0, 1)");
    }
    if (!(gate_px > 0.0)) throw ValidationError("matching: gate must be positive");
    if (max_iterations < 1 || max_rounds < 1) {
      throw ValidationError("matching: iteration budgets must be positive");
    }
    if (!(near_clip > 0.0) || !(max_depth > near_clip)) {
      throw ValidationError("matching: invalid depth range");
    }
    if (!(region_spacing > 0.0)) throw ValidationError("matching: region spacing must be > 0");
  }
};

enum class LaneModel { Linear, Region };

/// Region model iff the lane fit's outlier ratio strictly exceeds T_outlier.
inline LaneModel select_lane_model(double fit_outlier_ratio, const MatchingOptions& opts) {
  if (!(fit_outlier_ratio >= 0.0 && fit_outlier_ratio <= 1.0)) {
    throw ValidationError("outlier ratio must lie in [0, 1]");
  }
  return fit_outlier_ratio > opts.outlier_ratio_threshold ? LaneModel::Region
                                                          : LaneModel::Linear;
}

struct ProjectedPoint {
  FeatureId id = 0;
  SemanticClass semantic_class = SemanticClass::Other;
  ImagePoint uv = ImagePoint::Zero();
};

struct ProjectedLine {
  MapLineRef ref;
  SemanticClass semantic_class = SemanticClass::Other;
  ImageLine line;
};

struct ProjectedFeatures {
  std::vector<ProjectedPoint> points;
  std::vector<ProjectedLine> lines;
};

/// Number of straight segments a map feature contributes to line matching.
inline int segment_count(const MapFeature& f) {
  switch (f.kind) {
    case FeatureKind::Point: return 0;
    case FeatureKind::Line: return 1;
    case FeatureKind::Surface: return int(f.control_points.size()) - 1;
  }
  return 0;
}

/// Projects a 3D segment after clipping it to camera depth >= near.
inline std::optional<ImageLine> project_segment_clipped(const Eigen::Vector3d& a,
                                                        const Eigen::Vector3d& b,
                                                        const Eigen::Matrix3d& R,
                                                        const Eigen::Vector3d& center,
                                                        const CameraIntrinsics& K,
                                                        double near) {
  Eigen::Vector3d ca = R * (a - center);
  Eigen::Vector3d cb = R * (b - center);
  if (ca.z() < near && cb.z() < near) return std::nullopt;
  if (ca.z() < near) {
    ca = ca + (near - ca.z()) / (cb.z() - ca.z()) * (cb - ca);
  } else if (cb.z() < near) {
    cb = cb + (near - cb.z()) / (ca.z() - cb.z()) * (ca - cb);
  }
  ImageLine l{{K.fx * ca.x() / ca.z() + K.cx, K.fy * ca.y() / ca.z() + K.cy},
              {K.fx * cb.x() / cb.z() + K.cx, K.fy * cb.y() / cb.z() + K.cy}};
  if (l.length() <= kMinLineLength) return std::nullopt;
  return l;
}

/// Projects the point landmarks and line segments visible from pose. Points
/// may fall up to margin pixels outside the image; segments need both
/// endpoints in the depth range and are clipped to the image rectangle, the
/// same way detections are.
inline ProjectedFeatures project_features(const std::vector<MapFeature>& features,
                                          const CameraPose& pose, const CameraIntrinsics& K,
                                          const MatchingOptions& opts, double margin) {
  ProjectedFeatures out;
  const Eigen::Matrix3d R = camera_rotation(pose);
  auto depth = [&](const Eigen::Vector3d& p) { return (R * (p - pose.center)).z(); };
  auto in_range = [&](const Eigen::Vector3d& p) {
    const double d = depth(p);
    return d >= opts.near_clip && d <= opts.max_depth;
  };
  const double x0 = -margin, y0 = -margin;
  const double x1 = K.width - 1.0 + margin, y1 = K.height - 1.0 + margin;
  for (const auto& f : features) {
    if (f.kind == FeatureKind::Point) {
      if (!in_range(f.control_points[0])) continue;
      auto uv = project_point(f.control_points[0], R, pose.center, K);
      if (!uv || uv->x() < x0 || uv->x() > x1 || uv->y() < y0 || uv->y() > y1) continue;
      out.points.push_back({f.id, f.semantic_class, *uv});
      continue;
    }
    for (int s = 0; s < segment_count(f); ++s) {
      const auto& a = f.control_points[s];
      const auto& b = f.control_points[s + 1];
      if (!in_range(a) || !in_range(b)) continue;
      auto l = project_segment_clipped(a, b, R, pose.center, K, opts.near_clip);
      if (!l) continue;
      auto clipped = clip_segment(*l, 0.0, 0.0, K.width - 1.0, K.height - 1.0);
      if (!clipped || clipped->length() <= kMinLineLength) continue;
      out.lines.push_back({{f.id, s}, f.semantic_class, *clipped});
    }
  }
  return out;
}

/// Mean distance between corresponding endpoints, orientation-agnostic.
inline double endpoint_distance(const ImageLine& a, const ImageLine& b) {
  const double same = 0.5 * ((a.m1 - b.m1).norm() + (a.m2 - b.m2).norm());
  const double swapped = 0.5 * ((a.m1 - b.m2).norm() + (a.m2 - b.m1).norm());
  return std::min(same, swapped);
}

namespace detail {

// Mutually nearest pairs within gate; dist(i, j) = +inf forbids a pair.
template <typename Dist>
std::vector<std::pair<std::size_t, std::size_t>> mutual_nearest(std::size_t n_proj,
                                                                std::size_t n_det, Dist dist,
                                                                double gate) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n_proj * n_det, kInf);
  for (std::size_t i = 0; i < n_proj; ++i) {
    for (std::size_t j = 0; j < n_det; ++j) d[i * n_det + j] = dist(i, j);
  }
  std::vector<std::size_t> best_det(n_proj, n_det), best_proj(n_det, n_proj);
  for (std::size_t i = 0; i < n_proj; ++i) {
    double b = kInf;
    for (std::size_t j = 0; j < n_det; ++j) {
      if (d[i * n_det + j] < b) {
        b = d[i * n_det + j];
        best_det[i] = j;
      }
    }
  }
  for (std::size_t j = 0; j < n_det; ++j) {
    double b = kInf;
    for (std::size_t i = 0; i < n_proj; ++i) {
      if (d[i * n_det + j] < b) {
        b = d[i * n_det + j];
        best_proj[j] = i;
      }
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n_proj; ++i) {
    const std::size_t j = best_det[i];
    if (j < n_det && best_proj[j] == i && d[i * n_det + j] <= gate) pairs.emplace_back(i, j);
  }
  return pairs;
}

}  // namespace detail

/// Gated mutual-nearest-neighbour association within each semantic class.
/// Lane lines whose fit selects the region model are not line-associated.
inline Correspondences associate(const ProjectedFeatures& projected,
                                 const RecognizedFeatures& recognized, double gate,
                                 const MatchingOptions& opts = {}) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Correspondences c;
  const auto point_pairs = detail::mutual_nearest(
      projected.points.size(), recognized.points.size(),
      [&](std::size_t i, std::size_t j) {
        if (projected.points[i].semantic_class != recognized.points[j].semantic_class) return kInf;
        return point_distance(projected.points[i].uv, recognized.points[j].uv);
      },
      gate);
  for (auto [i, j] : point_pairs) c.points.emplace_back(projected.points[i].id, j);

  const auto line_pairs = detail::mutual_nearest(
      projected.lines.size(), recognized.lines.size(),
      [&](std::size_t i, std::size_t j) {
        const auto& det = recognized.lines[j];
        if (projected.lines[i].semantic_class != det.semantic_class) return kInf;
        if (det.semantic_class == SemanticClass::LaneLine &&
            select_lane_model(det.outlier_ratio, opts) == LaneModel::Region) {
          return kInf;
        }
        return endpoint_distance(projected.lines[i].line, det.line);
      },
      gate);
  for (auto [i, j] : line_pairs) c.lines.emplace_back(projected.lines[i].ref, j);
  std::sort(c.lines.begin(), c.lines.end());
  std::sort(c.points.begin(), c.points.end());
  return c;
}

/// Lane polyline resampled at the given spacing, endpoints included.
inline std::vector<Eigen::Vector3d> resample_polyline(const std::vector<Eigen::Vector3d>& pts,
                                                      double spacing) {
  std::vector<Eigen::Vector3d> out;
  if (pts.empty()) return out;
  out.push_back(pts.front());
  double carry = 0.0;  // distance travelled since the last emitted sample
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Eigen::Vector3d d = pts[i + 1] - pts[i];
    const double len = d.norm();
    double s = spacing - carry;
    while (s < len - 1e-9) {
      out.push_back(pts[i] + d * (s / len));
      s += spacing;
    }
    carry = len - (s - spacing);
  }
  if ((out.back() - pts.back()).norm() > 1e-9) out.push_back(pts.back());
  return out;
}

struct RegionSample {
  Eigen::Vector3d point;
  SemanticClass semantic_class;
  bool operator==(const RegionSample& o) const {
    return point == o.point && semantic_class == o.semantic_class;
  }
};

using RegionGrids = std::map<SemanticClass, EdtGrid>;

/// One distance transform per semantic class over the union of its masks.
inline RegionGrids build_region_grids(const RecognizedFeatures& recognized) {
  std::map<SemanticClass, BinaryMask> merged;
  for (const auto& r : recognized.regions) {
    auto [it, fresh] = merged.try_emplace(r.semantic_class, r.mask);
    if (!fresh) {
      for (std::size_t i = 0; i < it->second.cells.size(); ++i) {
        it->second.cells[i] |= r.mask.cells[i];
      }
    }
  }
  RegionGrids grids;
  for (const auto& [cls, mask] : merged) grids.emplace(cls, euclidean_distance_transform(mask));
  return grids;
}

inline std::vector<RegionSample> select_region_samples(const std::vector<MapFeature>& features,
                                                       const RegionGrids& grids,
                                                       const CameraPose& pose,
                                                       const MatchingOptions& opts) {
  std::vector<RegionSample> out;
  if (grids.empty()) return out;
  const Eigen::Matrix3d R = camera_rotation(pose);
  for (const auto& f : features) {
    if (f.kind != FeatureKind::Surface || !grids.contains(f.semantic_class)) continue;
    for (const auto& p : resample_polyline(f.control_points, opts.region_spacing)) {
      const double depth = (R * (p - pose.center)).z();
      if (depth >= opts.near_clip && depth <= opts.max_depth) {
        out.push_back({p, f.semantic_class});
      }
    }
  }
  return out;
}

/// Height of the lane control point nearest (in plan) to the camera.
inline double nearest_lane_height(const std::vector<MapFeature>& features,
                                  const Eigen::Vector3d& center, double fallback) {
  double best = std::numeric_limits<double>::infinity();
  double z = fallback;
  for (const auto& f : features) {
    if (f.semantic_class != SemanticClass::LaneLine) continue;
    for (const auto& p : f.control_points) {
      const double d = (p.head<2>() - center.head<2>()).squaredNorm();
      if (d < best) {
        best = d;
        z = p.z();
      }
    }
  }
  return z;
}

struct MatchingResidual {
  Eigen::VectorXd values;
  int line_terms = 0;
  int point_terms = 0;
  int region_terms = 0;
  int ground_terms = 0;
  int dropped = 0;  // behind-camera features contributing zeros
};

/// Stacked map-matching residual for a fixed association. Layout: two signed
/// endpoint offsets (scaled by 1/sqrt 2) per line pair, two pixel components
/// per point pair, one distance-transform sample per region sample, then
/// lambda_n * (pitch_deg, roll_deg, 100 * (C_z - z_lane - H)).
class MatchingProblem {
 public:
  MatchingProblem(const std::vector<MapFeature>& features, const RecognizedFeatures& recognized,
                  const CameraIntrinsics& K, Correspondences c, const RegionGrids& grids,
                  std::vector<RegionSample> samples, double z_lane, const MatchingOptions& opts)
      : recognized_(recognized),
        K_(K),
        c_(std::move(c)),
        grids_(grids),
        samples_(std::move(samples)),
        z_lane_(z_lane),
        opts_(opts) {
    for (const auto& f : features) by_id_.emplace(f.id, &f);
    for (const auto& [ref, j] : c_.lines) {
      if (!by_id_.contains(ref.feature) || j >= recognized.lines.size()) {
        throw ValidationError("correspondence references unknown line");
      }
    }
    for (const auto& [id, j] : c_.points) {
      if (!by_id_.contains(id) || j >= recognized.points.size()) {
        throw ValidationError("correspondence references unknown point");
      }
    }
  }

  Eigen::Index size() const {
    return Eigen::Index(2 * c_.lines.size() + 2 * c_.points.size() + samples_.size()) +
           (opts_.lambda_n > 0.0 ? 3 : 0);
  }

  MatchingResidual evaluate(const CameraPose& pose) const {
    MatchingResidual out;
    out.values = Eigen::VectorXd::Zero(size());
    const Eigen::Matrix3d R = camera_rotation(pose);
    Eigen::Index k = 0;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (const auto& [ref, j] : c_.lines) {
      const MapFeature& f = *by_id_.at(ref.feature);
      auto l = project_segment_clipped(f.control_points[ref.segment],
                                       f.control_points[ref.segment + 1], R, pose.center, K_,
                                       opts_.near_clip);
      if (l) {
        out.values.segment<2>(k) = signed_line_offsets(recognized_.lines[j].line, *l) * inv_sqrt2;
      } else {
        ++out.dropped;
      }
      k += 2;
      ++out.line_terms;
    }
    for (const auto& [id, j] : c_.points) {
      auto uv = project_point(by_id_.at(id)->control_points[0], R, pose.center, K_);
      if (uv) {
        out.values.segment<2>(k) = *uv - recognized_.points[j].uv;
      } else {
        ++out.dropped;
      }
      k += 2;
      ++out.point_terms;
    }
    for (const auto& s : samples_) {
      auto uv = project_point(s.point, R, pose.center, K_);
      if (uv) {
        out.values(k) = edt_sample(grids_.at(s.semantic_class), *uv);
      } else {
        ++out.dropped;
      }
      ++k;
      ++out.region_terms;
    }
    if (opts_.lambda_n > 0.0) {
      out.values(k++) = opts_.lambda_n * rad_to_deg(pose.pitch);
      out.values(k++) = opts_.lambda_n * rad_to_deg(pose.roll);
      out.values(k++) =
          opts_.lambda_n * 100.0 * (pose.center.z() - (z_lane_ + opts_.camera_height));
      out.ground_terms = 3;
    }
    return out;
  }

  LeastSquaresProblem least_squares() const {
    LeastSquaresProblem p;
    p.dimension = 6;
    p.residual = [this](const Eigen::VectorXd& x) {
      return evaluate(CameraPose::from_vector(x)).values;
    };
    p.jacobian_steps.resize(6);
    p.jacobian_steps << 1e-6, 1e-6, 1e-6, 1e-7, 1e-7, 1e-7;
    return p;
  }

  const Correspondences& correspondences() const { return c_; }

 private:
  const RecognizedFeatures& recognized_;
  CameraIntrinsics K_;
  Correspondences c_;
  const RegionGrids& grids_;
  std::vector<RegionSample> samples_;
  double z_lane_;
  MatchingOptions opts_;
  std::map<FeatureId, const MapFeature*> by_id_;
};

/// One-shot evaluation of the stacked residual at pose; region samples are
/// selected at the same pose.
inline MatchingResidual matching_residual(const std::vector<MapFeature>& features,
                                          const RecognizedFeatures& recognized,
                                          const Correspondences& c, const CameraPose& pose,
                                          const CameraIntrinsics& K,
                                          const MatchingOptions& opts = {}) {
  const RegionGrids grids = build_region_grids(recognized);
  auto samples = select_region_samples(features, grids, pose, opts);
  const double z_lane =
      nearest_lane_height(features, pose.center, opts.ground_height_fallback);
  MatchingProblem problem(features, recognized, K, c, grids, std::move(samples), z_lane, opts);
  return problem.evaluate(pose);
}

enum class MatchingStatus { Converged, NotConverged, UnderConstrained };

inline std::string_view to_string(MatchingStatus s) {
  switch (s) {
    case MatchingStatus::Converged: return "converged";
    case MatchingStatus::NotConverged: return "not_converged";
    case MatchingStatus::UnderConstrained: return "under_constrained";
  }
  return "?";
}

struct MatchingReport {
  MatchingStatus status = MatchingStatus::NotConverged;
  SolveReport solver;  // iterations summed over rounds; trace concatenated
  int rounds = 0;
  std::size_t correspondences = 0;
  int region_terms = 0;
  int dropped = 0;
  double z_lane = 0.0;
  double min_eigen_ratio = 0.0;
  Matrix6d information = Matrix6d::Zero();  // J^T J at the solution, pixel units
};

class MatchingError : public Error {
 public:
  MatchingError(MatchingStatus status, MatchingReport report, const std::string& what)
      : Error(what), status_(status), report_(std::move(report)) {}
  MatchingStatus status() const { return status_; }
  const MatchingReport& report() const { return report_; }

 private:
  MatchingStatus status_;
  MatchingReport report_;
};

struct PoseEstimate {
  CameraPose pose;
  MatchingReport report;
};

/// Iterative closest-feature pose estimation: associate at the current pose,
/// run Levenberg-Marquardt on the fixed association, re-associate, and stop
/// once the association is stable after a converged solve.
inline PoseEstimate estimate_pose(const HdMap& map, const RecognizedFeatures& recognized,
                                  const CameraPose& initial, const CameraIntrinsics& K,
                                  const MatchingOptions& opts = {}) {
  opts.validate();
  K.validate();
  initial.validate();
  recognized.validate(K);
  if (!map.bounds().contains(initial.center.head<2>())) {
    throw ValidationError("initial pose outside map bounds");
  }
  const std::vector<MapFeature> features =
      map.query(initial.center.head<2>(), opts.query_radius);
  const RegionGrids grids = build_region_grids(recognized);

  MatchingReport report;
  CameraPose pose = initial;
  // Associations already solved. Returning to any of them after a converged
  // solve ends the loop; this also breaks two-round flip-flops at the gate.
  std::vector<std::pair<Correspondences, std::vector<RegionSample>>> seen;
  SolveReport last;
  bool stable = false;
  int used = 0;
  std::optional<MatchingProblem> problem;

  for (int round = 0; round < opts.max_rounds; ++round) {
    Correspondences c =
        associate(project_features(features, pose, K, opts, opts.gate_px), recognized,
                  opts.gate_px, opts);
    auto samples = select_region_samples(features, grids, pose, opts);
    const bool repeated = std::any_of(seen.begin(), seen.end(), [&](const auto& h) {
      return h.first == c && h.second == samples;
    });
    if (repeated && last.converged()) {
      stable = true;
      break;
    }
    const double z_lane = nearest_lane_height(features, pose.center, opts.ground_height_fallback);
    problem.emplace(features, recognized, K, c, grids, samples, z_lane, opts);
    report.z_lane = z_lane;
    report.correspondences = c.size();
    report.region_terms = int(samples.size());
    if (problem->size() == 0) {
      report.status = MatchingStatus::UnderConstrained;
      throw MatchingError(report.status, report,
                          "map matching under-constrained: no correspondences and no "
                          "ground constraint");
    }
    if (used >= opts.max_iterations) break;
    SolverOptions so = opts.solver;
    so.max_iterations = opts.max_iterations - used;
    const SolveResult res = solve(problem->least_squares(), pose.to_vector(), so);
    ++report.rounds;
    used += res.report.iterations;
    if (report.rounds == 1) {
      report.solver.initial_cost = res.report.initial_cost;
      report.solver.cost_trace = res.report.cost_trace;
    } else {
      report.solver.cost_trace.insert(report.solver.cost_trace.end(),
                                      res.report.cost_trace.begin(),
                                      res.report.cost_trace.end());
    }
    report.solver.iterations = used;
    report.solver.final_cost = res.report.final_cost;
    report.solver.reason = res.report.reason;
    report.solver.final_damping = res.report.final_damping;
    pose = CameraPose::from_vector(res.x);
    last = res.report;
    seen.emplace_back(std::move(c), std::move(samples));
    if (!last.converged()) break;
  }

  const MatchingResidual final_r = problem->evaluate(pose);
  report.dropped = final_r.dropped;
  {
    const auto lsq = problem->least_squares();
    const Eigen::MatrixXd J = numeric_jacobian(lsq.residual, pose.to_vector(),
                                               lsq.jacobian_steps);
    report.information = J.transpose() * J;
    Eigen::SelfAdjointEigenSolver<Matrix6d> eig(report.information);
    const double max_ev = eig.eigenvalues().maxCoeff();
    report.min_eigen_ratio = max_ev > 0.0 ? eig.eigenvalues().minCoeff() / max_ev : 0.0;
  }
  pose = pose.normalized();
  if (!(report.min_eigen_ratio > opts.rank_tolerance)) {
    report.status = MatchingStatus::UnderConstrained;
    throw MatchingError(report.status, report,
                        "map matching under-constrained: rank-deficient normal equations");
  }
  if (!stable) {
    report.status = MatchingStatus::NotConverged;
    throw MatchingError(report.status, report,
                        "map matching did not converge within " +
                            std::to_string(opts.max_iterations) + " iterations");
  }
  report.status = MatchingStatus::Converged;
  return {pose, report};
}

}  // namespace mapcontainer
