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

// The bundled single-frame localization scene: a straight road with two lane
// lines, four poles and one traffic sign, observed by a level camera 1.5 m
// above the road.

#pragma once

#include <random>

#include "mapcontainer/camera_sim.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_matching.hpp"
#include "mapcontainer/map_model.hpp"

namespace mapcontainer {

struct DemoScene {
  HdMap map;
  CameraIntrinsics camera;
  CameraPose truth;
  RecognizedFeatures features;         // every landmark detected
  RecognizedFeatures sparse_features;  // poles only
  MatchingOptions options;             // options the scene is meant to be solved with
};

inline DemoScene build_demo_scene() {
  std::vector<MapFeature> f;
  auto pole = [&](FeatureId id, double x, double y) {
    f.push_back({id, FeatureKind::Line, {{x, y, 0.0}, {x, y, 6.0}}, SemanticClass::LampPost});
  };
  auto lane = [&](FeatureId id, double y) {
    f.push_back({id, FeatureKind::Surface, {{8.0, y, 0.0}, {24.0, y, 0.0}, {40.0, y, 0.0}},
                 SemanticClass::LaneLine});
  };
  lane(1, 1.75);
  lane(2, -1.75);
  pole(3, 12.0, 6.0);
  pole(4, 30.0, 7.0);
  pole(5, 16.0, -6.0);
  pole(6, 45.0, -5.0);
  f.push_back({7, FeatureKind::Point, {{25.0, -4.5, 2.2}}, SemanticClass::TrafficSign});

  DemoScene s;
  s.map = HdMap(std::move(f), GeodeticAnchor{}, Bounds2d{{-20.0, -20.0}, {60.0, 20.0}});
  s.camera = CameraIntrinsics{};
  s.truth.center = {0.0, 0.0, 1.5};
  s.options.gate_px = 200.0;

  CameraSimOptions all;
  all.range = 60.0;
  s.features = render_features(s.map.features(), s.truth, s.camera, all);
  CameraSimOptions poles = all;
  poles.detect_points = false;
  poles.detect_lanes = false;
  s.sparse_features = render_features(s.map.features(), s.truth, s.camera, poles);
  return s;
}

/// Uniform perturbation inside (dx, dy, dz, dyaw, dpitch, droll) bounds.
inline CameraPose perturb_pose(const CameraPose& p, const Vector6d& bounds,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector6d v = p.to_vector();
  for (int i = 0; i < 6; ++i) v(i) += bounds(i) * u(rng);
  return CameraPose::from_vector(v);
}

/// Largest perturbation the demo scene is specified to recover from.
inline Vector6d demo_perturbation_bounds() {
  Vector6d b;
  b << 1.0, 1.0, 0.3, deg_to_rad(5.0), deg_to_rad(3.0), deg_to_rad(3.0);
  return b;
}

}  // namespace mapcontainer
