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

// Synthetic recognized features: map landmarks seen through the camera with
// pixel noise, lanes optionally rasterized into region masks.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_matching.hpp"
#include "mapcontainer/map_model.hpp"

namespace mapcontainer {

struct CameraSimOptions {
  double pixel_sigma = 0.0;
  double near_clip = 1.0;
  double range = 60.0;
  // Outlier ratio attached to lane detections. Above the matching threshold
  // the lane is additionally emitted as a region mask.
  double lane_outlier_ratio = 0.0;
  double outlier_ratio_threshold = 0.3;
  bool detect_points = true;
  bool detect_lines = true;  // non-lane line landmarks (poles)
  bool detect_lanes = true;
};

namespace detail {

inline void paint_disc(BinaryMask& mask, const ImagePoint& c, double radius) {
  const int x0 = std::max(0, int(std::floor(c.x() - radius)));
  const int x1 = std::min(mask.width - 1, int(std::ceil(c.x() + radius)));
  const int y0 = std::max(0, int(std::floor(c.y() - radius)));
  const int y1 = std::min(mask.height - 1, int(std::ceil(c.y() + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if ((ImagePoint(x, y) - c).squaredNorm() <= radius * radius) mask.set(x, y);
    }
  }
}

}  // namespace detail

/// Lane polyline drawn into an image-sized mask with its projected width
/// (at least one pixel wide).
inline BinaryMask rasterize_lane(const MapFeature& lane, const CameraPose& pose,
                                 const CameraIntrinsics& K, double near, double range) {
  BinaryMask mask(K.width, K.height);
  const Eigen::Matrix3d R = camera_rotation(pose);
  const auto samples = resample_polyline(lane.control_points, 0.05);
  for (const auto& p : samples) {
    const Eigen::Vector3d pc = R * (p - pose.center);
    if (pc.z() < near || pc.z() > range) continue;
    const ImagePoint uv(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    const double radius = std::max(0.5, 0.5 * K.fx * lane.width / pc.z());
    detail::paint_disc(mask, uv, radius);
  }
  return mask;
}

/// Recognized features for a camera at pose. Segments are reported when both
/// endpoints are within [near, range] depth, clipped to the image; points
/// when they project inside the image. With rng == nullptr no noise is added.
inline RecognizedFeatures render_features(const std::vector<MapFeature>& features,
                                          const CameraPose& pose, const CameraIntrinsics& K,
                                          const CameraSimOptions& opts,
                                          std::mt19937_64* rng = nullptr) {
  RecognizedFeatures out;
  const Eigen::Matrix3d R = camera_rotation(pose);
  auto depth = [&](const Eigen::Vector3d& p) { return (R * (p - pose.center)).z(); };
  auto in_range = [&](const Eigen::Vector3d& p) {
    const double d = depth(p);
    return d >= opts.near_clip && d <= opts.range;
  };
  std::normal_distribution<double> noise(0.0, 1.0);
  auto jitter = [&](ImagePoint p) {
    if (rng && opts.pixel_sigma > 0.0) {
      p.x() += opts.pixel_sigma * noise(*rng);
      p.y() += opts.pixel_sigma * noise(*rng);
    }
    return p;
  };
  const bool lane_regions = opts.lane_outlier_ratio > opts.outlier_ratio_threshold;
  for (const auto& f : features) {
    if (f.kind == FeatureKind::Point) {
      if (!opts.detect_points || !in_range(f.control_points[0])) continue;
      auto uv = project_point(f.control_points[0], R, pose.center, K);
      if (!uv || !K.contains(*uv)) continue;
      out.points.push_back({jitter(*uv), f.semantic_class});
      continue;
    }
    const bool lane = f.semantic_class == SemanticClass::LaneLine;
    if (lane ? !opts.detect_lanes : !opts.detect_lines) continue;
    for (int s = 0; s < segment_count(f); ++s) {
      const auto& a = f.control_points[s];
      const auto& b = f.control_points[s + 1];
      if (!in_range(a) || !in_range(b)) continue;
      auto l = project_line(a, b, pose, K);
      if (!l) continue;
      auto clipped = clip_segment(*l, 0.0, 0.0, K.width - 1.0, K.height - 1.0);
      if (!clipped || clipped->length() <= kMinLineLength) continue;
      ImageLine noisy{jitter(clipped->m1), jitter(clipped->m2)};
      if (noisy.length() <= kMinLineLength) continue;
      out.lines.push_back({noisy, f.semantic_class, lane ? opts.lane_outlier_ratio : 0.0});
    }
    if (lane && lane_regions) {
      BinaryMask mask = rasterize_lane(f, pose, K, opts.near_clip, opts.range);
      if (mask.count() > 0) out.regions.push_back({std::move(mask), f.semantic_class});
    }
  }
  return out;
}

}  // namespace mapcontainer
