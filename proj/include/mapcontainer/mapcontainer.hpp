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

#include "mapcontainer/camera_sim.hpp"
#include "mapcontainer/demo_scene.hpp"
#include "mapcontainer/error.hpp"
#include "mapcontainer/estimator.hpp"
#include "mapcontainer/eval.hpp"
#include "mapcontainer/fusion.hpp"
#include "mapcontainer/geometry.hpp"
#include "mapcontainer/io.hpp"
#include "mapcontainer/map_matching.hpp"
#include "mapcontainer/map_model.hpp"
#include "mapcontainer/observation.hpp"
#include "mapcontainer/sim.hpp"
#include "mapcontainer/solver.hpp"
#include "mapcontainer/wire.hpp"
