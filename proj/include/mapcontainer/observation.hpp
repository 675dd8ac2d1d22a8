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

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mapcontainer/error.hpp"

namespace mapcontainer {

enum class SourceClass : std::uint8_t {
  VehicleToObstacle = 0,  // V-O
  VehicleToVehicle = 1,   // V-V
  VehicleToFeature = 2,   // V-F
  MapToFeature = 3,       // M-F, map prior on a feature position
  MapToVehicle = 4,       // M-V, map-matching pose pseudo-measurement
  Gnss = 5,               // G
  Prior = 6,              // received local estimate (distributed fusion)
};

inline constexpr SourceClass kAllSourceClasses[] = {
    SourceClass::VehicleToObstacle, SourceClass::VehicleToVehicle,
    SourceClass::VehicleToFeature,  SourceClass::MapToFeature,
    SourceClass::MapToVehicle,      SourceClass::Gnss,
    SourceClass::Prior};

inline std::string_view to_string(SourceClass c) {
  switch (c) {
    case SourceClass::VehicleToObstacle: return "V-O";
    case SourceClass::VehicleToVehicle: return "V-V";
    case SourceClass::VehicleToFeature: return "V-F";
    case SourceClass::MapToFeature: return "M-F";
    case SourceClass::MapToVehicle: return "M-V";
    case SourceClass::Gnss: return "G";
    case SourceClass::Prior: return "P";
  }
  return "?";
}

inline SourceClass source_class_from_string(std::string_view s) {
  for (SourceClass c : kAllSourceClasses) {
    if (to_string(c) == s) return c;
  }
  throw ParseError("unknown observation class '" + std::string(s) + "'");
}

inline bool is_relative(SourceClass c) {
  return c == SourceClass::VehicleToObstacle || c == SourceClass::VehicleToVehicle ||
         c == SourceClass::VehicleToFeature;
}

// Bit i selects state component i of the referenced entity. Vehicle poses
// are ordered (x, y, z, yaw, pitch, roll); point entities (x, y, z).
using ComponentMask = std::uint8_t;
inline constexpr ComponentMask kPoseComponents = 0x3F;
inline constexpr ComponentMask kPositionComponents = 0x07;
inline constexpr ComponentMask kPlanarComponents = 0x03;

inline int component_count(ComponentMask m) { return std::popcount(unsigned(m)); }

inline std::vector<int> mask_indices(ComponentMask m) {
  std::vector<int> out;
  for (int i = 0; i < 8; ++i) {
    if (m & (1u << i)) out.push_back(i);
  }
  return out;
}

/// One timestamped measurement z_k = h(X) + v_k, v_k ~ N(0, R_k).
struct ObservationRecord {
  SourceClass source = SourceClass::Gnss;
  std::string observer;
  std::string subject;
  double timestamp = 0.0;
  Eigen::VectorXd value;
  Eigen::MatrixXd covariance;
  ComponentMask components = 0;  // used by M-V and Prior only

  bool operator==(const ObservationRecord& o) const {
    return source == o.source && observer == o.observer && subject == o.subject &&
           timestamp == o.timestamp && components == o.components &&
           value.size() == o.value.size() && value == o.value &&
           covariance.rows() == o.covariance.rows() &&
           covariance.cols() == o.covariance.cols() && covariance == o.covariance;
  }
};

inline int expected_dimension(const ObservationRecord& r) {
  switch (r.source) {
    case SourceClass::Gnss:
    case SourceClass::VehicleToObstacle:
    case SourceClass::VehicleToVehicle:
    case SourceClass::VehicleToFeature:
      return 2;
    case SourceClass::MapToFeature:
      return 3;
    case SourceClass::MapToVehicle:
    case SourceClass::Prior:
      return component_count(r.components);
  }
  return -1;
}

inline bool is_symmetric_positive_definite(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.rows() != m.cols() || !m.allFinite()) return false;
  if (!m.isApprox(m.transpose(), 1e-12) &&
      (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    return false;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

inline void validate_record(const ObservationRecord& r) {
  const int dim = expected_dimension(r);
  const std::string tag = std::string(to_string(r.source)) + " record " +
                          r.observer + "->" + r.subject;
  if (dim <= 0 || r.value.size() != dim) {
    throw ValidationError(tag + ": value dimension does not match class model");
  }
  if (!r.value.allFinite()) throw ValidationError(tag + ": non-finite value");
  if (r.covariance.rows() != dim || r.covariance.cols() != dim) {
    throw ValidationError(tag + ": covariance dimension mismatch");
  }
  if (!is_symmetric_positive_definite(r.covariance)) {
    throw ValidationError(tag + ": covariance not symmetric positive definite");
  }
}

}  // namespace mapcontainer
