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

// Brute-force oracles and random fixtures shared by the unit and acceptance
// tests.

#pragma once

#include <unistd.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mapcontainer/mapcontainer.hpp"

namespace mapcontainer::oracle {

inline BinaryMask random_mask(int w, int h, double density, std::mt19937_64& rng) {
  BinaryMask m(w, h);
  std::bernoulli_distribution on(density);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (on(rng)) m.set(x, y);
    }
  }
  return m;
}

// O(N^2) scan over all feature cells.
inline std::vector<double> brute_force_edt(const BinaryMask& m) {
  std::vector<double> out(std::size_t(m.width) * m.height, std::numeric_limits<double>::infinity());
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (int v = 0; v < m.height; ++v) {
        for (int u = 0; u < m.width; ++u) {
          if (!m.at(u, v)) continue;
          const double d2 = double((u - x) * (u - x) + (v - y) * (v - y));
          best = std::min(best, d2);
        }
      }
      out[std::size_t(y) * m.width + x] = std::sqrt(best);
    }
  }
  return out;
}

// Continuous distance from p to the nearest feature cell center.
inline double brute_force_distance(const BinaryMask& m, const Eigen::Vector2d& p) {
  double best = std::numeric_limits<double>::infinity();
  for (int v = 0; v < m.height; ++v) {
    for (int u = 0; u < m.width; ++u) {
      if (m.at(u, v)) best = std::min(best, (Eigen::Vector2d(u, v) - p).norm());
    }
  }
  return best;
}

inline bool edt_matches_oracle(const BinaryMask& m) {
  const EdtGrid g = euclidean_distance_transform(m);
  const auto oracle = brute_force_edt(m);
  if (g.width != m.width || g.height != m.height) return false;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    if (!(g.values[i] == oracle[i])) return false;
  }
  return true;
}

inline double pose_position_error(const CameraPose& a, const CameraPose& b) {
  return (a.center - b.center).norm();
}

inline double pose_angle_error_deg(const CameraPose& a, const CameraPose& b) {
  return rad_to_deg(std::max({std::abs(normalize_angle(a.yaw - b.yaw)),
                              std::abs(normalize_angle(a.pitch - b.pitch)),
                              std::abs(normalize_angle(a.roll - b.roll))}));
}

inline ObservationRecord make_record(SourceClass c, const std::string& observer,
                                     const std::string& subject, Eigen::VectorXd value,
                                     double sigma, ComponentMask mask = 0) {
  ObservationRecord r;
  r.source = c;
  r.observer = observer;
  r.subject = subject;
  r.value = std::move(value);
  r.components = mask;
  r.covariance = Eigen::MatrixXd::Identity(r.value.size(), r.value.size()) * sigma * sigma;
  return r;
}

inline VehiclePose level_pose(double x, double y, double yaw) {
  VehiclePose p;
  p.position = {x, y, 0.0};
  p.yaw = yaw;
  return p;
}

// Random SPD matrix with eigenvalues spanning about two decades.
inline Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
  return A * A.transpose() + 0.05 * Eigen::MatrixXd::Identity(n, n);
}

inline DrivingState perturbed(const DrivingState& s, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  DrivingState p = s;
  for (auto& [id, v] : p.vehicles) {
    v.position += Eigen::Vector3d(n(rng), n(rng), 0.1 * n(rng));
    v.yaw += 0.05 * n(rng);
  }
  for (auto& [id, o] : p.obstacles) o += Eigen::Vector3d(n(rng), n(rng), 0.0);
  for (auto& [id, f] : p.features) f += Eigen::Vector3d(n(rng), n(rng), n(rng));
  return p;
}

struct RandomGraph {
  DrivingState state;
  std::vector<ObservationRecord> records;
};

// One to three vehicles with GNSS, zero to three obstacles seen by random
// vehicles, optional pose pseudo-measurements.
inline RandomGraph random_graph(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nv(1, 3), no(0, 3), coin(0, 1);
  std::uniform_real_distribution<double> pos(-30.0, 30.0), ang(-3.0, 3.0), sig(0.2, 2.0);
  std::normal_distribution<double> noise(0.0, 0.5);
  RandomGraph g;
  const int vehicles = nv(rng), obstacles = no(rng);
  for (int v = 0; v < vehicles; ++v) {
    const std::string id = "v" + std::to_string(v);
    g.state.vehicles[id] = level_pose(pos(rng), pos(rng), ang(rng));
    g.records.push_back(make_record(
        SourceClass::Gnss, id, id,
        g.state.vehicles[id].position.head<2>() + Eigen::Vector2d(noise(rng), noise(rng)),
        sig(rng)));
    if (coin(rng)) {
      Eigen::VectorXd z = g.state.vehicles[id].to_vector();
      z(3) += 0.02 * noise(rng);
      g.records.push_back(
          make_record(SourceClass::MapToVehicle, id, id, z, 0.1 * sig(rng), kPoseComponents));
    }
  }
  for (int o = 0; o < obstacles; ++o) {
    const std::string id = "o" + std::to_string(o);
    g.state.obstacles[id] = {pos(rng), pos(rng), 0.0};
    std::uniform_int_distribution<int> pick(0, vehicles - 1);
    const std::string obs = "v" + std::to_string(pick(rng));
    ObservationRecord r =
        make_record(SourceClass::VehicleToObstacle, obs, id, Eigen::Vector2d::Zero(), sig(rng));
    r.value = measurement_model(r, g.state) + Eigen::Vector2d(noise(rng), noise(rng));
    g.records.push_back(r);
  }
  return g;
}

// Largest relative gap between total_cost and an explicit sum of
// e^T R^-1 e over random graphs with dense covariances.
inline double whitened_cost_gap(std::mt19937_64& rng, int graphs) {
  double worst = 0.0;
  for (int i = 0; i < graphs; ++i) {
    RandomGraph rg = random_graph(rng);
    for (auto& r : rg.records) r.covariance = random_spd(int(r.value.size()), rng);
    FactorGraph g(rg.state);
    g.add(rg.records);
    const DrivingState probe = perturbed(rg.state, rng, 0.7);
    double explicit_cost = 0.0;
    for (const auto& r : rg.records) {
      Eigen::VectorXd e = r.value - measurement_model(r, probe);
      if (r.source == SourceClass::MapToVehicle) {
        for (int k = 3; k < 6; ++k) e(k) = normalize_angle(e(k));
      }
      explicit_cost += e.dot(r.covariance.inverse() * e);
    }
    const double gap =
        std::abs(total_cost(g, probe) - explicit_cost) / std::max(1.0, std::abs(explicit_cost));
    worst = std::max(worst, gap);
  }
  return worst;
}

struct MonotonicityResult {
  int compared = 0;
  int violations = 0;
};

// Adds one independent observation to each random graph and checks that no
// marginal variance grows. Both graphs are linearized at the same state.
inline MonotonicityResult information_monotonicity(std::mt19937_64& rng, int graphs) {
  std::uniform_real_distribution<double> sig(0.2, 2.0);
  std::normal_distribution<double> noise(0.0, 0.5);
  MonotonicityResult out;
  for (int i = 0; i < graphs; ++i) {
    RandomGraph rg = random_graph(rng);
    FactorGraph base(rg.state);
    base.add(rg.records);
    const auto before = marginal_covariance(base, rg.state);
    std::vector<ObservationRecord> more = rg.records;
    const auto& ids = base.layout().ids();
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    const std::string target = ids[pick(rng)];
    if (rg.state.vehicles.contains(target)) {
      more.push_back(make_record(
          SourceClass::Gnss, target, target,
          rg.state.vehicles.at(target).position.head<2>() + Eigen::Vector2d(noise(rng), noise(rng)),
          sig(rng)));
    } else {
      ObservationRecord r = make_record(SourceClass::VehicleToObstacle, "v0", target,
                                        Eigen::Vector2d::Zero(), sig(rng));
      r.value = measurement_model(r, rg.state) + Eigen::Vector2d(noise(rng), noise(rng));
      more.push_back(r);
    }
    FactorGraph richer(rg.state);
    richer.add(more);
    const auto after = marginal_covariance(richer, rg.state);
    for (const auto& [id, b] : before) {
      auto it = after.find(id);
      if (it == after.end() || it->second.components != b.components) {
        ++out.violations;
        continue;
      }
      for (Eigen::Index k = 0; k < b.covariance.rows(); ++k) {
        ++out.compared;
        if (it->second.covariance(k, k) > b.covariance(k, k) * (1.0 + 1e-9)) ++out.violations;
      }
    }
  }
  return out;
}

struct PermutationResult {
  double max_state_gap = 0.0;  // relative to 1 + |x|
  double max_cost_gap = 0.0;   // relative to 1 + cost
};

// Solves each random graph with its factors in two different orders.
inline PermutationResult permutation_invariance(std::mt19937_64& rng, int graphs) {
  PermutationResult out;
  for (int i = 0; i < graphs; ++i) {
    RandomGraph rg = random_graph(rng);
    const DrivingState init = perturbed(rg.state, rng, 0.5);
    FactorGraph g1(rg.state);
    g1.add(rg.records);
    std::vector<ObservationRecord> shuffled = rg.records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    FactorGraph g2(rg.state);
    g2.add(shuffled);
    const JointEstimate a = solve_joint(g1, init), b = solve_joint(g2, init);
    const Eigen::VectorXd xa = g1.layout().flatten(a.state), xb = g1.layout().flatten(b.state);
    out.max_state_gap = std::max(out.max_state_gap, (xa - xb).norm() / (1.0 + xa.norm()));
    out.max_cost_gap = std::max(out.max_cost_gap,
                                std::abs(a.report.solver.final_cost - b.report.solver.final_cost) /
                                    (1.0 + a.report.solver.final_cost));
  }
  return out;
}

// Unique scratch directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  std::filesystem::path p =
      std::filesystem::temp_directory_path() /
      ("mapcontainer_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mapcontainer::oracle
