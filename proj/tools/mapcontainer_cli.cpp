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

// mapcontainer: simulate, localize, fuse, eval and presets commands.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage error, 3 map matching did not
// converge, 4 threshold check failed.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mapcontainer/mapcontainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mapcontainer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitThreshold = 4;

constexpr const char* kVersion = "0.1.0";

struct UsageError : Error {
  using Error::Error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config_path;
  bool verbose = false;
  std::vector<std::string> argv;
};

// Artifacts written so far, name -> checksum.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& data) {
    write_file_atomic(dir_ / name, data);
    checksums_[name] = hex64(fnv1a64(data));
  }

  void manifest(json m) {
    json a = json::object();
    for (const auto& [name, sum] : checksums_) a[name] = {{"fnv1a64", sum}};
    m["artifacts"] = a;
    m["output_dir"] = dir_.string();
    m["version"] = kVersion;
    write_file_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> checksums_;
};

json base_manifest(const std::string& command, const Globals& g, const json& config) {
  return {{"command", command},
          {"argv", g.argv},
          {"config_path", g.config_path.empty() ? json(nullptr) : json(g.config_path)},
          {"config", config},
          {"seed", g.seed ? json(*g.seed) : json(nullptr)}};
}

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  json c = load_json(g.config_path);
  if (!c.is_object()) throw ParseError("config: top level must be an object");
  return c;
}

template <class T>
T pick(const CLI::Option* flag, const T& flag_value, const json& config, const char* key,
       const T& fallback) {
  if (flag && flag->count() > 0) return flag_value;
  if (config.contains(key)) {
    try {
      return config.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

Scenario load_scenario(const std::string& preset, const std::string& path) {
  if (!path.empty()) return scenario_from_json(load_json(path));
  try {
    return build_preset(preset);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

FusionMode parse_mode(const std::string& s) {
  try {
    return fusion_mode_from_string(s);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset = "urban";
  std::string scenario;
  std::string mode = "distributed";
  long long trials = 50;
  std::string perspective;
  double gate_px = 0.0;
  bool svg = false;
  CLI::Option* preset_opt = nullptr;
  CLI::Option* scenario_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* trials_opt = nullptr;
  CLI::Option* perspective_opt = nullptr;
  CLI::Option* gate_opt = nullptr;
};

int cmd_simulate(const SimulateArgs& a, const Globals& g) {
  const json config = load_config(g);
  if (!g.seed && !config.contains("seed")) throw UsageError("simulate: --seed is required");
  const std::uint64_t seed = g.seed ? *g.seed : config.at("seed").get<std::uint64_t>();
  const long long trials = pick(a.trials_opt, a.trials, config, "trials", 50LL);
  if (trials < 1) throw UsageError("simulate: --trials must be >= 1");
  const std::string scenario_path = pick(a.scenario_opt, a.scenario, config, "scenario", std::string());
  const std::string preset = pick(a.preset_opt, a.preset, config, "preset", std::string("urban"));
  const FusionMode mode = parse_mode(pick(a.mode_opt, a.mode, config, "mode", std::string("distributed")));
  const Scenario sc = load_scenario(preset, scenario_path);
  SensorSuite suite = sensors_from_json(config.value("sensors", json::object()));
  TrialConfig cfg{simulation_fusion_config(mode, suite),
                  pick(a.perspective_opt, a.perspective, config, "perspective", std::string())};
  cfg.fusion.use_map_matching = suite.camera.enabled;
  cfg.fusion.matching.gate_px =
      pick(a.gate_opt, a.gate_px, config, "gate_px", cfg.fusion.matching.gate_px);

  if (g.verbose) {
    std::cerr << "simulate: scenario " << sc.name << ", mode " << to_string(mode) << ", "
              << trials << " trials, seed " << seed << "\n";
  }
  const auto results = run_monte_carlo(sc, suite, cfg, std::size_t(trials), seed);
  const MetricReport report = evaluate(results, sc.name);

  OutputDir out(g.out);
  out.write("trials.csv", trials_csv(results));
  out.write("metrics.csv", metrics_csv({report}));
  out.write("summary.csv", summary_csv({report}));
  out.write("report.json", report_to_json(report).dump(2) + "\n");
  if (a.svg) {
    out.write("rmse_self.svg", svg_plot({report}, false));
    out.write("rmse_targets.svg", svg_plot({report}, true));
  }
  json m = base_manifest("simulate", g, config);
  m["seed"] = seed;
  m["preset"] = scenario_path.empty() ? json(preset) : json(nullptr);
  m["scenario_path"] = scenario_path.empty() ? json(nullptr) : json(scenario_path);
  m["mode"] = to_string(mode);
  m["trials"] = trials;
  m["perspective"] = report.perspective;
  m["sensors"] = sensors_to_json(suite);
  m["gate_px"] = cfg.fusion.matching.gate_px;
  out.manifest(m);

  std::cout << summary_csv({report});
  if (report.failed_trials > 0) {
    std::cerr << "simulate: " << report.failed_trials << " of " << trials
              << " trials had failed ticks\n";
    for (const auto& tr : results) {
      for (const auto& t : tr.ticks) {
        if (t.failed) {
          std::cerr << "  trial " << tr.trial << " tick " << t.index << ": " << t.error << "\n";
          break;
        }
      }
    }
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct LocalizeArgs {
  std::string map;
  std::string features;
  std::string initial;
  double lambda_n = 0.001;
  double gate_px = 20.0;
  int max_iterations = 50;
};

json matching_report_json(const MatchingReport& r) {
  return {{"status", to_string(r.status)},
          {"iterations", r.solver.iterations},
          {"rounds", r.rounds},
          {"initial_cost", r.solver.initial_cost},
          {"final_cost", r.solver.final_cost},
          {"reason", to_string(r.solver.reason)},
          {"correspondences", r.correspondences},
          {"region_terms", r.region_terms},
          {"dropped", r.dropped},
          {"z_lane", r.z_lane},
          {"min_eigen_ratio", r.min_eigen_ratio}};
}

int cmd_localize(const LocalizeArgs& a, const Globals& g) {
  const json config = load_config(g);
  MatchingOptions opts;
  opts.lambda_n = a.lambda_n;
  opts.gate_px = a.gate_px;
  opts.max_iterations = a.max_iterations;
  CameraPose initial;
  try {
    initial = parse_pose(a.initial);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("--initial: ") + e.what());
  }
  const HdMap map = load_map(a.map);
  const FeaturesDocument doc = features_from_json(load_json(a.features));

  json out = {{"map", a.map}, {"features", a.features}, {"initial", pose_to_json(initial)}};
  int code = kExitOk;
  try {
    const PoseEstimate est = estimate_pose(map, doc.features, initial, doc.camera, opts);
    out["pose"] = pose_to_json(est.pose);
    out["report"] = matching_report_json(est.report);
  } catch (const MatchingError& e) {
    out["error"] = e.what();
    out["report"] = matching_report_json(e.report());
    code = kExitNotConverged;
  }
  std::cout << out.dump(2) << "\n";
  if (!g.out.empty()) {
    OutputDir dir(g.out);
    dir.write("localize.json", out.dump(2) + "\n");
    json m = base_manifest("localize", g, config);
    m["lambda_n"] = a.lambda_n;
    m["gate_px"] = a.gate_px;
    m["max_iterations"] = a.max_iterations;
    dir.manifest(m);
  }
  if (code == kExitNotConverged) std::cerr << "localize: " << out["error"].get<std::string>() << "\n";
  return code;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::string preset = "overlap";
  std::string scenario;
  std::string mode = "distributed";
  int tick = 0;
};

int cmd_fuse(const FuseArgs& a, const Globals& g) {
  const json config = load_config(g);
  const Scenario sc = load_scenario(a.preset, a.scenario);
  if (a.tick < 0 || a.tick >= sc.tick_count()) throw UsageError("fuse: --tick out of range");
  const FusionMode mode = parse_mode(a.mode);
  const SensorSuite suite = sensors_from_json(config.value("sensors", json::object()));
  TrialConfig cfg{simulation_fusion_config(mode, suite), {}};
  const std::uint64_t seed = g.seed.value_or(0);
  // Only the requested tick is reported; earlier ticks are simulated so the
  // random streams and message latency match a full trial.
  Scenario cut = sc;
  cut.duration = a.tick * sc.tick;
  const TrialResult tr = run_trial(cut, suite, cfg, trial_seed(seed, 0));
  const TickResult& tick = tr.ticks.back();
  json entries = json::array();
  for (const auto& e : tick.entries) {
    json je = {{"id", e.id},
               {"role", e.connected ? "self" : "target"},
               {"visible", e.visible},
               {"truth", {e.truth.x(), e.truth.y(), e.truth.z()}}};
    je["estimate"] = e.estimate ? json({e.estimate->x(), e.estimate->y(), e.estimate->z()})
                                : json(nullptr);
    entries.push_back(je);
  }
  json out = {{"scenario", sc.name}, {"mode", to_string(mode)}, {"tick", a.tick},
              {"t", tick.t},         {"seed", seed},            {"bytes", tick.bytes},
              {"failed", tick.failed}, {"entries", entries}};
  if (tick.failed) out["error"] = tick.error;
  std::cout << out.dump(2) << "\n";
  if (!g.out.empty()) {
    OutputDir dir(g.out);
    dir.write("fuse.json", out.dump(2) + "\n");
    json m = base_manifest("fuse", g, config);
    m["seed"] = seed;
    m["mode"] = to_string(mode);
    m["tick"] = a.tick;
    dir.manifest(m);
  }
  return tick.failed ? kExitRuntime : kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> single;
  std::string coop;
  std::string thresholds;
  bool svg = false;
};

MetricReport load_report(const std::string& dir) {
  const fs::path p = fs::path(dir) / "report.json";
  if (!fs::exists(p)) throw Error("no results in '" + dir + "' (report.json missing)");
  return report_from_json(load_json(p.string()));
}

int cmd_eval(const EvalArgs& a, const Globals& g) {
  const json config = load_config(g);
  std::vector<MetricReport> single;
  for (const auto& d : a.single) single.push_back(load_report(d));
  const MetricReport coop = load_report(a.coop);
  Thresholds th;
  if (!a.thresholds.empty()) th = thresholds_from_json(load_json(a.thresholds));
  else if (config.contains("thresholds")) th = thresholds_from_json(config.at("thresholds"));
  const Comparison c = compare_modes(single, coop, th);

  std::vector<MetricReport> all = single;
  all.push_back(coop);
  std::cout << summary_csv(all);
  if (c.best_single_target_rmse && coop.targets) {
    std::cout << "target rmse: best single " << detail::fixed(*c.best_single_target_rmse, 4)
              << ", cooperative " << detail::fixed(coop.targets->rmse, 4);
    if (c.target_improvement) {
      std::cout << ", improvement " << detail::fixed(100.0 * *c.target_improvement, 1) << "%";
    }
    std::cout << "\n";
  }
  for (const auto& f : c.failures) std::cout << "FAIL " << f << "\n";
  std::cout << (c.passed() ? "thresholds passed\n" : "thresholds failed\n");
  if (!g.out.empty()) {
    OutputDir dir(g.out);
    dir.write("comparison.csv", comparison_csv(c));
    dir.write("summary.csv", summary_csv(all));
    if (a.svg) {
      dir.write("rmse_self.svg", svg_plot(all, false));
      dir.write("rmse_targets.svg", svg_plot(all, true));
    }
    json m = base_manifest("eval", g, config);
    m["single"] = a.single;
    m["coop"] = a.coop;
    m["thresholds_path"] = a.thresholds.empty() ? json(nullptr) : json(a.thresholds);
    m["passed"] = c.passed();
    dir.manifest(m);
  }
  return c.passed() ? kExitOk : kExitThreshold;
}

// ---------------------------------------------------------------------------

struct PresetsArgs {
  std::string export_dir;
  std::string export_demo;
};

json demo_truth_json(const DemoScene& s) {
  return {{"pose", pose_to_json(s.truth)},
          {"camera", intrinsics_to_json(s.camera)},
          {"gate_px", s.options.gate_px},
          {"tolerance", {{"position_m", 0.01}, {"angle_deg", 0.05}}}};
}

int cmd_presets(const PresetsArgs& a, const Globals& g) {
  if (a.export_dir.empty() && a.export_demo.empty()) {
    for (Preset p : kAllPresets) {
      const Scenario s = build_preset(p);
      std::cout << to_string(p) << "\t" << s.connected_ids().size() << " connected, "
                << s.obstacle_count() << " obstacles, " << s.map.landmark_count()
                << " landmarks\n";
    }
    return kExitOk;
  }
  if (!a.export_dir.empty()) {
    OutputDir dir(a.export_dir);
    for (Preset p : kAllPresets) {
      dir.write(std::string(to_string(p)) + ".json",
                scenario_to_json(build_preset(p)).dump(2) + "\n");
    }
    dir.manifest(base_manifest("presets", g, json::object()));
  }
  if (!a.export_demo.empty()) {
    OutputDir dir(a.export_demo);
    const DemoScene s = build_demo_scene();
    dir.write("map.json", map_to_json(s.map).dump(2) + "\n");
    dir.write("features.json", features_to_json(s.features, s.camera).dump(2) + "\n");
    dir.write("sparse_features.json", features_to_json(s.sparse_features, s.camera).dump(2) + "\n");
    dir.write("truth.json", demo_truth_json(s).dump(2) + "\n");
    dir.manifest(base_manifest("presets", g, json::object()));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative perception with a vector HD map", "mapcontainer"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Base random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config_path, "JSON config file; flags override its keys");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo simulation of one fusion mode");
  simulate->fallthrough();
  sim.preset_opt = simulate->add_option("--preset", sim.preset, "urban, suburban, overlap, blindspot1, blindspot2");
  sim.scenario_opt = simulate->add_option("--scenario", sim.scenario, "Scenario JSON file");
  sim.mode_opt = simulate->add_option("--mode", sim.mode, "gnss_only, local, distributed, centralized");
  sim.trials_opt = simulate->add_option("--trials", sim.trials, "Number of Monte-Carlo trials");
  sim.perspective_opt = simulate->add_option("--perspective", sim.perspective, "Reporting vehicle (default ego)");
  sim.gate_opt = simulate->add_option("--gate", sim.gate_px, "Map-matching association gate (px)");
  simulate->add_flag("--svg", sim.svg, "Also write RMSE plots");

  LocalizeArgs loc;
  auto* localize = app.add_subcommand("localize", "Single-frame map-matching pose estimate");
  localize->fallthrough();
  localize->add_option("--map", loc.map, "Map JSON")->required();
  localize->add_option("--features", loc.features, "Recognized features JSON")->required();
  localize->add_option("--initial", loc.initial, "x,y,z,yaw,pitch,roll (m, deg)")->required();
  localize->add_option("--lambda-n", loc.lambda_n, "Ground-constraint weight");
  localize->add_option("--gate", loc.gate_px, "Association gate (px)");
  localize->add_option("--max-iterations", loc.max_iterations, "Iteration budget");

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Fuse one simulated tick and print the state");
  fuse->fallthrough();
  fuse->add_option("--preset", fu.preset, "Preset name");
  fuse->add_option("--scenario", fu.scenario, "Scenario JSON file");
  fuse->add_option("--mode", fu.mode, "Fusion mode");
  fuse->add_option("--tick", fu.tick, "Tick index");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compare simulate outputs against thresholds");
  eval->fallthrough();
  eval->add_option("--single", ev.single, "Single-vehicle result directory (repeatable)")->required();
  eval->add_option("--coop", ev.coop, "Cooperative result directory")->required();
  eval->add_option("--thresholds", ev.thresholds, "Thresholds JSON");
  eval->add_flag("--svg", ev.svg, "Also write RMSE plots");

  PresetsArgs pr;
  auto* presets = app.add_subcommand("presets", "List or export preset scenarios");
  presets->fallthrough();
  presets->add_option("--export", pr.export_dir, "Write preset scenario files to this directory");
  presets->add_option("--export-demo", pr.export_demo, "Write the demo localization scene here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*simulate) {
      if (g.out.empty()) g.out = "out";
      return cmd_simulate(sim, g);
    }
    if (*localize) return cmd_localize(loc, g);
    if (*fuse) return cmd_fuse(fu, g);
    if (*eval) return cmd_eval(ev, g);
    if (*presets) return cmd_presets(pr, g);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
