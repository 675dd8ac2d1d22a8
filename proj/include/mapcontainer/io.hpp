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

// JSON documents for recognized features, poses and sensor settings, plus
// file helpers used by the command-line tool.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/fusion.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/map_matching.hpp"
#include "mapcontainer/map_model.hpp"
#include "mapcontainer/sim.hpp"

namespace mapcontainer {

// ---------------------------------------------------------------------------
// Files

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json load_json(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << data;
    if (!out.flush()) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Poses and intrinsics. Angles are degrees in documents.

inline nlohmann::json pose_to_json(const CameraPose& p) {
  return {{"position", {p.center.x(), p.center.y(), p.center.z()}},
          {"yaw_deg", rad_to_deg(p.yaw)},
          {"pitch_deg", rad_to_deg(p.pitch)},
          {"roll_deg", rad_to_deg(p.roll)}};
}

inline CameraPose pose_from_json(const nlohmann::json& j) {
  try {
    CameraPose p;
    const auto& c = j.at("position");
    p.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    p.yaw = deg_to_rad(j.value("yaw_deg", 0.0));
    p.pitch = deg_to_rad(j.value("pitch_deg", 0.0));
    p.roll = deg_to_rad(j.value("roll_deg", 0.0));
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pose document: ") + e.what());
  }
}

/// "x,y,z,yaw,pitch,roll" with angles in degrees.
inline CameraPose parse_pose(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("pose: '" + item + "' is not a number");
    }
  }
  if (v.size() != 6) throw ValidationError("pose: expected x,y,z,yaw,pitch,roll");
  CameraPose p;
  p.center = {v[0], v[1], v[2]};
  p.yaw = deg_to_rad(v[3]);
  p.pitch = deg_to_rad(v[4]);
  p.roll = deg_to_rad(v[5]);
  p.validate();
  return p;
}

inline nlohmann::json intrinsics_to_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  try {
    CameraIntrinsics K;
    K.fx = j.value("fx", K.fx);
    K.fy = j.value("fy", K.fy);
    K.cx = j.value("cx", K.cx);
    K.cy = j.value("cy", K.cy);
    K.width = j.value("width", K.width);
    K.height = j.value("height", K.height);
    K.validate();
    return K;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("camera document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Recognized features. Region masks are run-length encoded starting with an
// empty run, row-major.

inline nlohmann::json features_to_json(const RecognizedFeatures& f, const CameraIntrinsics& K) {
  using nlohmann::json;
  json doc;
  doc["camera"] = intrinsics_to_json(K);
  json points = json::array();
  for (const auto& p : f.points) {
    points.push_back({{"uv", {p.uv.x(), p.uv.y()}}, {"semantic_class", to_string(p.semantic_class)}});
  }
  json lines = json::array();
  for (const auto& l : f.lines) {
    lines.push_back({{"m1", {l.line.m1.x(), l.line.m1.y()}},
                     {"m2", {l.line.m2.x(), l.line.m2.y()}},
                     {"semantic_class", to_string(l.semantic_class)},
                     {"outlier_ratio", l.outlier_ratio}});
  }
  json regions = json::array();
  for (const auto& r : f.regions) {
    regions.push_back({{"semantic_class", to_string(r.semantic_class)},
                       {"width", r.mask.width},
                       {"height", r.mask.height},
                       {"runs", encode_runs(r.mask)}});
  }
  doc["points"] = points;
  doc["lines"] = lines;
  doc["regions"] = regions;
  return doc;
}

struct FeaturesDocument {
  RecognizedFeatures features;
  CameraIntrinsics camera;
};

inline FeaturesDocument features_from_json(const nlohmann::json& doc) {
  try {
    FeaturesDocument out;
    if (doc.contains("camera")) out.camera = intrinsics_from_json(doc.at("camera"));
    auto xy = [](const nlohmann::json& a) {
      return ImagePoint(a.at(0).get<double>(), a.at(1).get<double>());
    };
    auto cls = [](const nlohmann::json& j) {
      return semantic_class_from_string(j.value("semantic_class", std::string("other")));
    };
    for (const auto& p : doc.value("points", nlohmann::json::array())) {
      out.features.points.push_back({xy(p.at("uv")), cls(p)});
    }
    for (const auto& l : doc.value("lines", nlohmann::json::array())) {
      out.features.lines.push_back(
          {ImageLine{xy(l.at("m1")), xy(l.at("m2"))}, cls(l), l.value("outlier_ratio", 0.0)});
    }
    for (const auto& r : doc.value("regions", nlohmann::json::array())) {
      out.features.regions.push_back(
          {decode_runs(r.at("width").get<int>(), r.at("height").get<int>(),
                       r.at("runs").get<std::vector<std::uint32_t>>()),
           cls(r)});
    }
    out.features.validate(out.camera);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("features document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sensor settings. Every key is optional; missing keys keep the defaults.

inline nlohmann::json sensors_to_json(const SensorSuite& s) {
  return {{"gnss_sigma", s.gnss.sigma},
          {"gnss_bias_walk_sigma", s.gnss.bias_walk_sigma},
          {"perception_range", s.perception.range},
          {"perception_fov_deg", s.perception.fov_deg},
          {"perception_sigma", s.perception.sigma},
          {"occlusion", s.perception.occlusion},
          {"camera", intrinsics_to_json(s.camera.intrinsics)},
          {"camera_height", s.camera.height},
          {"pixel_sigma", s.camera.pixel_sigma},
          {"camera_range", s.camera.range},
          {"lane_outlier_ratio", s.camera.lane_outlier_ratio},
          {"map_matching", s.camera.enabled},
          {"latency_ticks", s.comm.latency_ticks},
          {"drop_probability", s.comm.drop_probability},
          {"init_position_sigma", s.init_position_sigma},
          {"init_yaw_sigma_deg", s.init_yaw_sigma_deg},
          {"covariance_floor", s.covariance_floor}};
}

inline SensorSuite sensors_from_json(const nlohmann::json& j, SensorSuite s = {}) {
  try {
    s.gnss.sigma = j.value("gnss_sigma", s.gnss.sigma);
    s.gnss.bias_walk_sigma = j.value("gnss_bias_walk_sigma", s.gnss.bias_walk_sigma);
    s.perception.range = j.value("perception_range", s.perception.range);
    s.perception.fov_deg = j.value("perception_fov_deg", s.perception.fov_deg);
    s.perception.sigma = j.value("perception_sigma", s.perception.sigma);
    s.perception.occlusion = j.value("occlusion", s.perception.occlusion);
    if (j.contains("camera")) s.camera.intrinsics = intrinsics_from_json(j.at("camera"));
    s.camera.height = j.value("camera_height", s.camera.height);
    s.camera.pixel_sigma = j.value("pixel_sigma", s.camera.pixel_sigma);
    s.camera.range = j.value("camera_range", s.camera.range);
    s.camera.lane_outlier_ratio = j.value("lane_outlier_ratio", s.camera.lane_outlier_ratio);
    s.camera.enabled = j.value("map_matching", s.camera.enabled);
    s.comm.latency_ticks = j.value("latency_ticks", s.comm.latency_ticks);
    s.comm.drop_probability = j.value("drop_probability", s.comm.drop_probability);
    s.init_position_sigma = j.value("init_position_sigma", s.init_position_sigma);
    s.init_yaw_sigma_deg = j.value("init_yaw_sigma_deg", s.init_yaw_sigma_deg);
    s.covariance_floor = j.value("covariance_floor", s.covariance_floor);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sensor settings: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Driving state as a document (debug output).

inline nlohmann::json state_to_json(const DrivingState& s) {
  using nlohmann::json;
  json v = json::object(), o = json::object(), f = json::object();
  for (const auto& [id, p] : s.vehicles) {
    v[id] = {{"position", {p.position.x(), p.position.y(), p.position.z()}},
             {"yaw_deg", rad_to_deg(p.yaw)},
             {"pitch_deg", rad_to_deg(p.pitch)},
             {"roll_deg", rad_to_deg(p.roll)}};
  }
  for (const auto& [id, p] : s.obstacles) o[id] = {p.x(), p.y(), p.z()};
  for (const auto& [id, p] : s.features) f[id] = {p.x(), p.y(), p.z()};
  return {{"timestamp", s.timestamp}, {"vehicles", v}, {"obstacles", o}, {"features", f}};
}

}  // namespace mapcontainer
