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

// Joint maximum-likelihood estimate of the driving-environment state:
// every observation is whitened by its covariance and the stacked residual
// is minimized with the shared LM solver.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/observation.hpp"
#include "mapcontainer/solver.hpp"

namespace mapcontainer {

/// Vehicle pose components ordered (x, y, z, yaw, pitch, roll).
struct VehiclePose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  Vector6d to_vector() const {
    Vector6d v;
    v << position, yaw, pitch, roll;
    return v;
  }
  static VehiclePose from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return {v.head<3>(), v(3), v(4), v(5)};
  }
  bool operator==(const VehiclePose&) const = default;
};

inline constexpr const char* kPoseComponentNames[] = {"x", "y", "z", "yaw", "pitch", "roll"};

struct DrivingState {
  double timestamp = 0.0;
  std::map<std::string, VehiclePose> vehicles;
  std::map<std::string, Eigen::Vector3d> obstacles;
  std::map<std::string, Eigen::Vector3d> features;  // only features with V-F factors

  void validate() const {
    std::set<std::string> seen;
    auto check = [&](const std::string& id) {
      if (id.empty()) throw ValidationError("driving state: empty id");
      if (!seen.insert(id).second) {
        throw ValidationError("driving state: id '" + id + "' used twice");
      }
    };
    for (const auto& [id, v] : vehicles) {
      check(id);
      if (!v.to_vector().allFinite()) throw ValidationError("vehicle " + id + ": non-finite");
    }
    for (const auto& [id, p] : obstacles) {
      check(id);
      if (!p.allFinite()) throw ValidationError("obstacle " + id + ": non-finite");
    }
    for (const auto& [id, p] : features) {
      check(id);
      if (!p.allFinite()) throw ValidationError("feature " + id + ": non-finite");
    }
  }

  bool has(const std::string& id) const {
    return vehicles.contains(id) || obstacles.contains(id) || features.contains(id);
  }

  /// Position of any entity.
  Eigen::Vector3d position(const std::string& id) const {
    if (auto it = vehicles.find(id); it != vehicles.end()) return it->second.position;
    if (auto it = obstacles.find(id); it != obstacles.end()) return it->second;
    if (auto it = features.find(id); it != features.end()) return it->second;
    throw ValidationError("unknown state id '" + id + "'");
  }

  DrivingState normalized() const {
    DrivingState s = *this;
    for (auto& [id, v] : s.vehicles) {
      v.yaw = normalize_angle(v.yaw);
      v.pitch = normalize_angle(v.pitch);
      v.roll = normalize_angle(v.roll);
    }
    return s;
  }
};

/// Deterministic flat layout: vehicles (6 each), obstacles, features (3 each),
/// each group in ascending id order.
class StateLayout {
 public:
  enum class Kind { Vehicle, Obstacle, Feature };
  struct Entry {
    Kind kind;
    Eigen::Index offset;
    int size;
  };

  StateLayout() = default;
  explicit StateLayout(const DrivingState& s) {
    Eigen::Index k = 0;
    for (const auto& [id, v] : s.vehicles) add(id, Kind::Vehicle, 6, k);
    for (const auto& [id, p] : s.obstacles) add(id, Kind::Obstacle, 3, k);
    for (const auto& [id, p] : s.features) add(id, Kind::Feature, 3, k);
    dimension_ = k;
  }

  Eigen::Index dimension() const { return dimension_; }
  const std::vector<std::string>& ids() const { return ids_; }
  bool has(const std::string& id) const { return entries_.contains(id); }
  const Entry& at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ValidationError("unknown state id '" + id + "'");
    return it->second;
  }

  Eigen::VectorXd flatten(const DrivingState& s) const {
    Eigen::VectorXd x(dimension_);
    for (const auto& [id, v] : s.vehicles) x.segment<6>(at(id).offset) = v.to_vector();
    for (const auto& [id, p] : s.obstacles) x.segment<3>(at(id).offset) = p;
    for (const auto& [id, p] : s.features) x.segment<3>(at(id).offset) = p;
    return x;
  }

  DrivingState unflatten(const Eigen::VectorXd& x, const DrivingState& like) const {
    DrivingState s = like;
    for (auto& [id, v] : s.vehicles) v = VehiclePose::from_vector(x.segment<6>(at(id).offset));
    for (auto& [id, p] : s.obstacles) p = x.segment<3>(at(id).offset);
    for (auto& [id, p] : s.features) p = x.segment<3>(at(id).offset);
    return s;
  }

 private:
  void add(const std::string& id, Kind kind, int size, Eigen::Index& k) {
    entries_.emplace(id, Entry{kind, k, size});
    ids_.push_back(id);
    k += size;
  }

  std::map<std::string, Entry> entries_;
  std::vector<std::string> ids_;
  Eigen::Index dimension_ = 0;
};

namespace detail {

struct Linearization {
  Eigen::VectorXd h;           // predicted value
  Eigen::MatrixXd H;           // d h / d x over the flat layout
  std::vector<int> angle_rows; // rows whose innovation is wrapped
};

inline Eigen::Matrix2d planar_rotation_t(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Eigen::Matrix2d R;
  R << c, s, -s, c;
  return R;
}

inline void require_kind(const StateLayout& layout, const std::string& id, StateLayout::Kind k,
                         const char* what) {
  if (layout.at(id).kind != k) {
    throw ValidationError(std::string(what) + ": '" + id + "' has the wrong entity kind");
  }
}

// Prediction and Jacobian of one record; with want_jacobian = false H is left
// empty.
inline Linearization linearize(const ObservationRecord& r, const StateLayout& layout,
                               const Eigen::VectorXd& x, bool want_jacobian) {
  using Kind = StateLayout::Kind;
  Linearization out;
  const Eigen::Index n = layout.dimension();
  const int dim = expected_dimension(r);
  out.h.resize(dim);
  if (want_jacobian) out.H = Eigen::MatrixXd::Zero(dim, n);
  switch (r.source) {
    case SourceClass::Gnss: {
      require_kind(layout, r.observer, Kind::Vehicle, "G record");
      const auto o = layout.at(r.observer).offset;
      out.h = x.segment<2>(o);
      if (want_jacobian) out.H.block<2, 2>(0, o).setIdentity();
      break;
    }
    case SourceClass::VehicleToObstacle:
    case SourceClass::VehicleToVehicle:
    case SourceClass::VehicleToFeature: {
      require_kind(layout, r.observer, Kind::Vehicle, "relative record observer");
      const Kind want = r.source == SourceClass::VehicleToObstacle ? Kind::Obstacle
                        : r.source == SourceClass::VehicleToVehicle ? Kind::Vehicle
                                                                      : Kind::Feature;
      require_kind(layout, r.subject, want, "relative record subject");
      const auto o = layout.at(r.observer).offset;
      const auto s = layout.at(r.subject).offset;
      const double yaw = x(o + 3);
      const Eigen::Vector2d d = x.segment<2>(s) - x.segment<2>(o);
      const Eigen::Matrix2d Rt = planar_rotation_t(yaw);
      out.h = Rt * d;
      if (want_jacobian) {
        const double c = std::cos(yaw), sn = std::sin(yaw);
        Eigen::Matrix2d dRt;
        dRt << -sn, c, -c, -sn;
        out.H.block<2, 2>(0, s) += Rt;
        out.H.block<2, 2>(0, o) -= Rt;
        out.H.block<2, 1>(0, o + 3) = dRt * d;
      }
      break;
    }
    case SourceClass::MapToFeature: {
      require_kind(layout, r.subject, Kind::Feature, "M-F record");
      const auto s = layout.at(r.subject).offset;
      out.h = x.segment<3>(s);
      if (want_jacobian) out.H.block<3, 3>(0, s).setIdentity();
      break;
    }
    case SourceClass::MapToVehicle:
    case SourceClass::Prior: {
      const std::string& id = r.source == SourceClass::MapToVehicle ? r.observer : r.subject;
      const auto& e = layout.at(id);
      const auto idx = mask_indices(r.components);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= e.size) {
          throw ValidationError("component mask exceeds entity '" + id + "' size");
        }
        out.h(Eigen::Index(k)) = x(e.offset + idx[k]);
        if (want_jacobian) out.H(Eigen::Index(k), e.offset + idx[k]) = 1.0;
        if (e.kind == Kind::Vehicle && idx[k] >= 3) out.angle_rows.push_back(int(k));
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Observation factors bound to a fixed state layout.
class FactorGraph {
 public:
  FactorGraph() = default;
  explicit FactorGraph(const DrivingState& layout_state)
      : layout_state_(layout_state), layout_(layout_state) {
    layout_state.validate();
  }

  void add(const ObservationRecord& r) {
    validate_record(r);
    const bool uses_observer = r.source != SourceClass::MapToFeature &&
                               r.source != SourceClass::Prior;
    const bool uses_subject = r.source != SourceClass::Gnss &&
                              r.source != SourceClass::MapToVehicle;
    if (uses_observer && !layout_.has(r.observer)) {
      throw ValidationError(std::string(to_string(r.source)) + " record: unknown observer '" +
                            r.observer + "'");
    }
    if (uses_subject && !layout_.has(r.subject)) {
      throw ValidationError(std::string(to_string(r.source)) + " record: unknown subject '" +
                            r.subject + "'");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(r.covariance);
    Factor f{r, llt.matrixL()};
    // Cheap structural check of kinds and masks.
    detail::linearize(r, layout_, layout_.flatten(layout_state_), false);
    factors_.push_back(std::move(f));
  }

  void add(const std::vector<ObservationRecord>& records) {
    for (const auto& r : records) add(r);
  }

  const StateLayout& layout() const { return layout_; }
  const DrivingState& layout_state() const { return layout_state_; }
  std::size_t size() const { return factors_.size(); }
  const ObservationRecord& record(std::size_t i) const { return factors_[i].record; }

  Eigen::Index residual_size() const {
    Eigen::Index n = 0;
    for (const auto& f : factors_) n += f.record.value.size();
    return n;
  }

  /// L^-1 (z - h) for factor i at flat state x.
  Eigen::VectorXd whitened(std::size_t i, const Eigen::VectorXd& x) const {
    const Factor& f = factors_[i];
    const auto lin = detail::linearize(f.record, layout_, x, false);
    return f.L.triangularView<Eigen::Lower>().solve(innovation(f.record, lin));
  }

  /// Stacked whitened residual and (optionally) its Jacobian.
  void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* residual,
                Eigen::MatrixXd* jacobian) const {
    const Eigen::Index m = residual_size();
    if (residual) residual->resize(m);
    if (jacobian) jacobian->setZero(m, layout_.dimension());
    Eigen::Index row = 0;
    for (const auto& f : factors_) {
      const auto lin = detail::linearize(f.record, layout_, x, jacobian != nullptr);
      const Eigen::Index d = lin.h.size();
      const auto L = f.L.triangularView<Eigen::Lower>();
      if (residual) residual->segment(row, d) = L.solve(innovation(f.record, lin));
      if (jacobian) jacobian->middleRows(row, d) = -L.solve(lin.H);
      row += d;
    }
  }

  /// Flat indices each factor actually depends on.
  std::vector<bool> touched_components() const {
    std::vector<bool> touched(std::size_t(layout_.dimension()), false);
    const Eigen::VectorXd x = layout_.flatten(layout_state_);
    for (const auto& f : factors_) {
      const auto lin = detail::linearize(f.record, layout_, x, true);
      for (Eigen::Index c = 0; c < lin.H.cols(); ++c) {
        // Relative models touch the observer yaw even where d h / d yaw
        // happens to vanish at this particular state.
        if (lin.H.col(c).cwiseAbs().maxCoeff() > 0.0) touched[std::size_t(c)] = true;
      }
      if (is_relative(f.record.source)) {
        const auto o = layout_.at(f.record.observer).offset;
        touched[std::size_t(o + 3)] = true;
      }
    }
    return touched;
  }

 private:
  struct Factor {
    ObservationRecord record;
    Eigen::MatrixXd L;
  };

  static Eigen::VectorXd innovation(const ObservationRecord& r, const detail::Linearization& lin) {
    Eigen::VectorXd e = r.value - lin.h;
    for (int k : lin.angle_rows) e(k) = normalize_angle(e(k));
    return e;
  }

  DrivingState layout_state_;
  StateLayout layout_;
  std::vector<Factor> factors_;
};

inline Eigen::VectorXd measurement_model(const ObservationRecord& r, const DrivingState& s) {
  const StateLayout layout(s);
  return detail::linearize(r, layout, layout.flatten(s), false).h;
}

/// L^-1 (z - h(X)) with L the lower Cholesky factor of R.
inline Eigen::VectorXd whitened_residual(const ObservationRecord& r, const DrivingState& s) {
  FactorGraph g(s);
  g.add(r);
  return g.whitened(0, g.layout().flatten(s));
}

/// Sum of squared whitened residuals, i.e. sum of e^T R^-1 e.
inline double total_cost(const FactorGraph& graph, const DrivingState& s) {
  Eigen::VectorXd r;
  graph.evaluate(graph.layout().flatten(s), &r, nullptr);
  return r.squaredNorm();
}

struct EstimatorReport {
  SolveReport solver;
  std::map<SourceClass, double> class_residual_norm;  // whitened residual norm per class
  std::vector<std::string> unobservable;             // "<id>.<component>", frozen
  std::vector<Eigen::Index> free_components;         // flat indices that were estimated
};

struct JointEstimate {
  DrivingState state;
  EstimatorReport report;
};

struct EstimatorOptions {
  SolverOptions solver{};
};

/// Components estimated by solve_joint: touched by a factor, and for vehicle
/// yaw only when some M-V or prior factor pins it (relative observations
/// alone leave a rotation gauge around each observer).
inline std::vector<Eigen::Index> free_components(const FactorGraph& graph,
                                                 std::vector<std::string>* unobservable) {
  const auto touched = graph.touched_components();
  const StateLayout& layout = graph.layout();
  std::set<std::string> yaw_pinned;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto& r = graph.record(i);
    if ((r.source == SourceClass::MapToVehicle || r.source == SourceClass::Prior) &&
        (r.components & (1u << 3))) {
      yaw_pinned.insert(r.source == SourceClass::MapToVehicle ? r.observer : r.subject);
    }
  }
  std::vector<Eigen::Index> free;
  for (const auto& id : layout.ids()) {
    const auto& e = layout.at(id);
    for (int c = 0; c < e.size; ++c) {
      const Eigen::Index k = e.offset + c;
      bool ok = touched[std::size_t(k)];
      if (e.kind == StateLayout::Kind::Vehicle && c == 3 && !yaw_pinned.contains(id)) ok = false;
      if (ok) {
        free.push_back(k);
      } else if (unobservable) {
        unobservable->push_back(id + "." + kPoseComponentNames[c]);
      }
    }
  }
  return free;
}

/// Joint MLE over all free state components starting from initial.
inline JointEstimate solve_joint(const FactorGraph& graph, const DrivingState& initial,
                                 const EstimatorOptions& opts = {}) {
  initial.validate();
  const StateLayout& layout = graph.layout();
  if (StateLayout(initial).ids() != layout.ids()) {
    throw ValidationError("solve_joint: initial state does not match the graph layout");
  }
  JointEstimate out;
  const auto free = free_components(graph, &out.report.unobservable);
  out.report.free_components = free;
  const Eigen::VectorXd base = layout.flatten(initial);
  auto expand = [&](const Eigen::VectorXd& xf) {
    Eigen::VectorXd x = base;
    for (std::size_t k = 0; k < free.size(); ++k) x(free[k]) = xf(Eigen::Index(k));
    return x;
  };
  Eigen::VectorXd x0(Eigen::Index(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) x0(Eigen::Index(k)) = base(free[k]);

  LeastSquaresProblem p;
  p.dimension = x0.size();
  p.residual = [&](const Eigen::VectorXd& xf) {
    Eigen::VectorXd r;
    graph.evaluate(expand(xf), &r, nullptr);
    return r;
  };
  p.jacobian = [&](const Eigen::VectorXd& xf) {
    Eigen::MatrixXd J, Jf(graph.residual_size(), Eigen::Index(free.size()));
    graph.evaluate(expand(xf), nullptr, &J);
    for (std::size_t k = 0; k < free.size(); ++k) Jf.col(Eigen::Index(k)) = J.col(free[k]);
    return Jf;
  };
  const SolveResult res = solve(p, x0, opts.solver);
  out.report.solver = res.report;
  const Eigen::VectorXd x = expand(res.x);
  out.state = layout.unflatten(x, initial).normalized();

  Eigen::VectorXd r;
  graph.evaluate(layout.flatten(out.state), &r, nullptr);
  Eigen::Index row = 0;
  std::map<SourceClass, double> sq;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto d = graph.record(i).value.size();
    sq[graph.record(i).source] += r.segment(row, d).squaredNorm();
    row += d;
  }
  for (const auto& [c, v] : sq) out.report.class_residual_norm[c] = std::sqrt(v);
  return out;
}

struct MarginalBlock {
  ComponentMask components = 0;  // estimated components of the entity
  Eigen::MatrixXd covariance;    // over those components, ascending order
};

/// Diagonal blocks of (J^T J)^-1 over the free components at solution.
inline std::map<std::string, MarginalBlock> marginal_covariance(const FactorGraph& graph,
                                                                const DrivingState& solution) {
  const StateLayout& layout = graph.layout();
  const auto free = free_components(graph, nullptr);
  std::map<std::string, MarginalBlock> out;
  if (free.empty()) return out;
  Eigen::MatrixXd J;
  graph.evaluate(layout.flatten(solution), nullptr, &J);
  Eigen::MatrixXd Jf(J.rows(), Eigen::Index(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) Jf.col(Eigen::Index(k)) = J.col(free[k]);
  const Eigen::MatrixXd info = Jf.transpose() * Jf;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  const double max_ev = eig.eigenvalues().maxCoeff();
  if (!(max_ev > 0.0) || eig.eigenvalues().minCoeff() <= 1e-14 * max_ev) {
    throw EstimatorError("marginal covariance: singular information matrix");
  }
  const Eigen::MatrixXd cov = info.llt().solve(
      Eigen::MatrixXd::Identity(info.rows(), info.cols()));

  std::map<std::string, std::vector<std::pair<int, Eigen::Index>>> per_entity;
  for (std::size_t k = 0; k < free.size(); ++k) {
    for (const auto& id : layout.ids()) {
      const auto& e = layout.at(id);
      if (free[k] >= e.offset && free[k] < e.offset + e.size) {
        per_entity[id].emplace_back(int(free[k] - e.offset), Eigen::Index(k));
        break;
      }
    }
  }
  for (const auto& [id, comps] : per_entity) {
    MarginalBlock b;
    b.covariance.resize(Eigen::Index(comps.size()), Eigen::Index(comps.size()));
    for (std::size_t a = 0; a < comps.size(); ++a) {
      b.components |= ComponentMask(1u << comps[a].first);
      for (std::size_t c = 0; c < comps.size(); ++c) {
        b.covariance(Eigen::Index(a), Eigen::Index(c)) = cov(comps[a].second, comps[c].second);
      }
    }
    out.emplace(id, std::move(b));
  }
  return out;
}

}  // namespace mapcontainer
