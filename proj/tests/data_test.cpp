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

// Shipped data files must match what the library generates today.

#include "gtest/gtest.h"
#include "mapcontainer/demo_scene.hpp"
#include "mapcontainer/io.hpp"
#include "mapcontainer/sim.hpp"

namespace mapcontainer {
namespace {

const std::string kData = MAPCONTAINER_DATA;

std::string Doc(const nlohmann::json& j) { return j.dump(2) + "\n"; }

TEST(DataTest, PresetFilesCurrent) {
  for (Preset p : kAllPresets) {
    const std::string path = kData + "/presets/" + std::string(to_string(p)) + ".json";
    EXPECT_EQ(read_text_file(path), Doc(scenario_to_json(build_preset(p)))) << path;
    const Scenario back = scenario_from_json(load_json(path));
    EXPECT_EQ(back.agents.size(), build_preset(p).agents.size());
  }
}

TEST(DataTest, DemoFilesCurrent) {
  const DemoScene s = build_demo_scene();
  const std::string dir = kData + "/demo/";
  EXPECT_EQ(read_text_file(dir + "map.json"), Doc(map_to_json(s.map)));
  EXPECT_EQ(read_text_file(dir + "features.json"), Doc(features_to_json(s.features, s.camera)));
  EXPECT_EQ(read_text_file(dir + "sparse_features.json"),
            Doc(features_to_json(s.sparse_features, s.camera)));
}

TEST(DataTest, DemoFeaturesDecode) {
  const DemoScene s = build_demo_scene();
  const FeaturesDocument doc = features_from_json(load_json(kData + "/demo/features.json"));
  ASSERT_EQ(doc.features.regions.size(), s.features.regions.size());
  for (std::size_t i = 0; i < s.features.regions.size(); ++i) {
    EXPECT_EQ(doc.features.regions[i].mask, s.features.regions[i].mask);
  }
  ASSERT_EQ(doc.features.lines.size(), s.features.lines.size());
  for (std::size_t i = 0; i < s.features.lines.size(); ++i) {
    EXPECT_LT((doc.features.lines[i].line.m1 - s.features.lines[i].line.m1).norm(), 1e-6);
    EXPECT_LT((doc.features.lines[i].line.m2 - s.features.lines[i].line.m2).norm(), 1e-6);
  }
  EXPECT_EQ(doc.camera.width, s.camera.width);
}

TEST(DataTest, DemoTruthMatchesScene) {
  const DemoScene s = build_demo_scene();
  const auto truth = load_json(kData + "/demo/truth.json");
  const CameraPose p = pose_from_json(truth.at("pose"));
  EXPECT_LT((p.center - s.truth.center).norm(), 1e-12);
  EXPECT_EQ(truth.at("gate_px").get<double>(), s.options.gate_px);
}

}  // namespace
}  // namespace mapcontainer
