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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mapcontainer/error.hpp"

namespace mapcontainer {

inline constexpr double kPi = 3.14159265358979323846;

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Wraps to (-pi, pi].
inline double normalize_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct CameraIntrinsics {
  double fx = 800.0;
  double fy = 800.0;
  double cx = 640.0;
  double cy = 360.0;
  int width = 1280;
  int height = 720;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw ValidationError("camera intrinsics: focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
      throw ValidationError("camera intrinsics: image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw ValidationError("camera intrinsics: principal point outside image");
    }
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d K;
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return K;
  }

  bool contains(const Eigen::Vector2d& uv) const {
    return uv.x() >= 0.0 && uv.x() <= width - 1.0 && uv.y() >= 0.0 &&
           uv.y() <= height - 1.0;
  }
};

// Body frame is x forward, y left, z up. Body-to-map rotation is the
// intrinsic Z-Y-X composition Rz(yaw) * Ry(pitch) * Rx(roll).
inline Eigen::Matrix3d body_to_map_rotation(double yaw, double pitch,
                                            double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

// Optical frame: z along the viewing direction, x right, y down.
inline Eigen::Matrix3d body_to_camera_axes() {
  Eigen::Matrix3d R;
  R << 0.0, -1.0, 0.0,  //
      0.0, 0.0, -1.0,   //
      1.0, 0.0, 0.0;
  return R;
}

/// 6-DOF camera pose in the map frame. With all angles zero the camera is
/// level and looks along map +x.
struct CameraPose {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  Vector6d to_vector() const {
    Vector6d v;
    v << center, yaw, pitch, roll;
    return v;
  }

  static CameraPose from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    CameraPose p;
    p.center = v.head<3>();
    p.yaw = v(3);
    p.pitch = v(4);
    p.roll = v(5);
    return p;
  }

  CameraPose normalized() const {
    CameraPose p = *this;
    p.yaw = normalize_angle(yaw);
    p.pitch = normalize_angle(pitch);
    p.roll = normalize_angle(roll);
    return p;
  }

  void validate() const {
    if (!to_vector().allFinite()) {
      throw ValidationError("camera pose: non-finite component");
    }
  }
};

/// Rotation taking map-frame vectors into the camera optical frame.
inline Eigen::Matrix3d camera_rotation(const CameraPose& pose) {
  return body_to_camera_axes() *
         body_to_map_rotation(pose.yaw, pose.pitch, pose.roll).transpose();
}

using ImagePoint = Eigen::Vector2d;

struct ImageLine {
  ImagePoint m1 = ImagePoint::Zero();
  ImagePoint m2 = ImagePoint::Zero();

  double length() const { return (m2 - m1).norm(); }
};

inline constexpr double kMinLineLength = 1e-6;

// Pinhole projection with an explicit rotation. nullopt when the point is on
// or behind the image plane.
inline std::optional<ImagePoint> project_point(const Eigen::Vector3d& p_map,
                                               const Eigen::Matrix3d& R,
                                               const Eigen::Vector3d& center,
                                               const CameraIntrinsics& K) {
  const Eigen::Vector3d pc = R * (p_map - center);
  if (!(pc.z() > 0.0)) return std::nullopt;
  return ImagePoint(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
}

inline std::optional<ImagePoint> project_point(const Eigen::Vector3d& p_map,
                                               const CameraPose& pose,
                                               const CameraIntrinsics& K) {
  return project_point(p_map, camera_rotation(pose), pose.center, K);
}

inline std::optional<ImageLine> project_line(const Eigen::Vector3d& a,
                                             const Eigen::Vector3d& b,
                                             const CameraPose& pose,
                                             const CameraIntrinsics& K) {
  const Eigen::Matrix3d R = camera_rotation(pose);
  const auto ua = project_point(a, R, pose.center, K);
  const auto ub = project_point(b, R, pose.center, K);
  if (!ua || !ub) return std::nullopt;
  ImageLine l{*ua, *ub};
  if (l.length() <= kMinLineLength) return std::nullopt;
  return l;
}

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

/// Signed perpendicular distances of the projected endpoints to the infinite
/// line through the detected endpoints.
inline Eigen::Vector2d signed_line_offsets(const ImageLine& detected,
                                           const ImageLine& projected) {
  const Eigen::Vector2d dir = detected.m2 - detected.m1;
  const double len = dir.norm();
  if (len <= kMinLineLength) {
    throw ValidationError("line distance: degenerate detected line");
  }
  return {cross2(dir, projected.m1 - detected.m1) / len,
          cross2(dir, projected.m2 - detected.m1) / len};
}

/// Mean perpendicular distance (pixels) from the projected endpoints to the
/// detected line.
inline double line_distance(const ImageLine& detected, const ImageLine& projected) {
  const Eigen::Vector2d d = signed_line_offsets(detected, projected);
  return 0.5 * (std::abs(d.x()) + std::abs(d.y()));
}

inline double point_distance(const ImagePoint& projected, const ImagePoint& detected) {
  return (projected - detected).norm();
}

inline double point_segment_distance(const Eigen::Vector2d& p,
                                     const Eigen::Vector2d& a,
                                     const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Liang-Barsky clip of a 2D segment to [xmin,xmax] x [ymin,ymax].
inline std::optional<ImageLine> clip_segment(const ImageLine& s, double xmin,
                                             double ymin, double xmax,
                                             double ymax) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Eigen::Vector2d d = s.m2 - s.m1;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {s.m1.x() - xmin, xmax - s.m1.x(), s.m1.y() - ymin,
                       ymax - s.m1.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
  }
  return ImageLine{s.m1 + t0 * d, s.m1 + t1 * d};
}

/// Row-major binary grid; nonzero cells are feature cells.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> cells;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), cells(std::size_t(w) * h, 0) {}

  bool at(int x, int y) const { return cells[std::size_t(y) * width + x] != 0; }
  void set(int x, int y, bool on = true) {
    cells[std::size_t(y) * width + x] = on ? 1 : 0;
  }
  std::size_t count() const {
    return std::size_t(std::count_if(cells.begin(), cells.end(),
                                     [](std::uint8_t c) { return c != 0; }));
  }
  bool operator==(const BinaryMask&) const = default;
};

/// Per-cell Euclidean distance (pixels) to the nearest feature cell. Cell
/// (x, y) has its center at pixel coordinate (x, y).
struct EdtGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  bool empty = false;  // mask had no feature cells; all values are +inf

  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

namespace detail {

// Felzenszwalb-Huttenlocher lower envelope of parabolas over the finite
// entries of f; writes squared distances into d.
inline void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d,
                                std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int n = int(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
    };
    double s = intersect(v[k]);
    // z[0] is -inf, so the loop stops at k == 0.
    while (s <= z[k]) {
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = double(q - v[j]);
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Exact Euclidean distance transform (separable lower-envelope algorithm).
inline EdtGrid euclidean_distance_transform(const BinaryMask& mask) {
  if (mask.width <= 0 || mask.height <= 0 ||
      mask.cells.size() != std::size_t(mask.width) * mask.height) {
    throw ValidationError("distance transform: empty or inconsistent grid");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int w = mask.width;
  const int h = mask.height;
  EdtGrid grid;
  grid.width = w;
  grid.height = h;
  grid.values.assign(std::size_t(w) * h, kInf);
  if (mask.count() == 0) {
    grid.empty = true;
    return grid;
  }

  const int n = std::max(w, h);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = mask.at(x, y) ? 0.0 : kInf;
    detail::squared_distance_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) grid.values[std::size_t(y) * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = grid.values[std::size_t(y) * w + x];
    detail::squared_distance_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) grid.values[std::size_t(y) * w + x] = std::sqrt(d[x]);
  }
  return grid;
}

/// Bilinear sample of the distance grid. Outside the grid the value at the
/// nearest border point is extended by the Euclidean excess distance.
inline double edt_sample(const EdtGrid& grid, const ImagePoint& p) {
  if (grid.empty || grid.width <= 0 || grid.height <= 0) {
    return std::numeric_limits<double>::infinity();
  }
  const double cu = std::clamp(p.x(), 0.0, double(grid.width - 1));
  const double cv = std::clamp(p.y(), 0.0, double(grid.height - 1));
  const double excess = std::hypot(p.x() - cu, p.y() - cv);
  const int x0 = std::min(int(std::floor(cu)), grid.width - 1);
  const int y0 = std::min(int(std::floor(cv)), grid.height - 1);
  const int x1 = std::min(x0 + 1, grid.width - 1);
  const int y1 = std::min(y0 + 1, grid.height - 1);
  const double tx = cu - x0;
  const double ty = cv - y0;
  const double top = (1.0 - tx) * grid.at(x0, y0) + tx * grid.at(x1, y0);
  const double bottom = (1.0 - tx) * grid.at(x0, y1) + tx * grid.at(x1, y1);
  return (1.0 - ty) * top + ty * bottom + excess;
}

}  // namespace mapcontainer
