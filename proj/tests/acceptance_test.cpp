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

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "test_support.hpp"

namespace mapcontainer {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string Num(double v, int digits = 4) { return detail::fixed(v, digits); }

std::string Sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

TrialConfig Config(FusionMode mode, const SensorSuite& suite, const std::string& perspective = {}) {
  TrialConfig c;
  c.fusion = simulation_fusion_config(mode, suite);
  c.perspective = perspective;
  return c;
}

MetricReport Simulate(const Scenario& sc, const SensorSuite& suite, FusionMode mode,
                      std::size_t trials, std::uint64_t seed, const std::string& perspective = {}) {
  return evaluate(run_monte_carlo(sc, suite, Config(mode, suite, perspective), trials, seed),
                  sc.name);
}

constexpr std::uint64_t kSeed = 7;
constexpr std::size_t kTrials = 50;

// ---------------------------------------------------------------------------

Outcome EdtExactness() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> size(1, 64);
  std::uniform_real_distribution<double> density(0.0, 0.3);
  int exact = 0;
  double edt_seconds = 0.0;
  for (int i = 0; i < 100; ++i) {
    const BinaryMask m = oracle::random_mask(size(rng), size(rng), density(rng), rng);
    const auto t0 = Clock::now();
    const EdtGrid g = euclidean_distance_transform(m);
    edt_seconds += SecondsSince(t0);
    const auto ref = oracle::brute_force_edt(m);
    bool same = g.width == m.width && g.height == m.height && g.values.size() == ref.size();
    for (std::size_t k = 0; same && k < ref.size(); ++k) same = g.values[k] == ref[k];
    exact += same;
  }
  return {exact == 100 && edt_seconds < 5.0,
          std::to_string(exact) + "/100 masks bit-exact, EDT time " + Num(edt_seconds, 3) + " s"};
}

Outcome SolverSanity() {
  Eigen::Matrix3d A;
  A << 4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0;
  const Eigen::Vector3d b(1.0, -2.0, 3.0);
  LeastSquaresProblem lin;
  lin.dimension = 3;
  lin.residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return A * x - b; };
  const SolveResult l = solve(lin, Eigen::Vector3d::Zero());
  const bool lin_ok = l.report.final_cost <= 1e-18 && l.report.iterations <= 3;

  LeastSquaresProblem rosen;
  rosen.dimension = 2;
  rosen.residual = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
    return r;
  };
  SolverOptions so;
  so.max_iterations = 200;
  const SolveResult r = solve(rosen, Eigen::Vector2d(-1.2, 1.0), so);
  const double rosen_err = (r.x - Eigen::Vector2d(1.0, 1.0)).norm();

  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> n(0.0, 1.0);
  double jac_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 2 + trial % 5, m = 3 + trial % 4;
    Eigen::MatrixXd M(m, dim);
    Eigen::VectorXd c(m), x(dim);
    for (int i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
    for (int i = 0; i < m; ++i) c(i) = n(rng);
    for (int i = 0; i < dim; ++i) x(i) = n(rng);
    auto f = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return (M * v).array().sin().matrix() + c * v.squaredNorm();
    };
    const Eigen::MatrixXd analytic =
        (M * x).array().cos().matrix().asDiagonal() * M + 2.0 * c * x.transpose();
    jac_err = std::max(jac_err, (numeric_jacobian(f, x) - analytic).cwiseAbs().maxCoeff());
  }
  return {lin_ok && rosen_err <= 1e-6 && jac_err <= 1e-5,
          "linear cost " + Sci(l.report.final_cost) + " in " + std::to_string(l.report.iterations) +
              " it, Rosenbrock error " + Sci(rosen_err) + ", Jacobian error " + Sci(jac_err)};
}

Outcome MapMatchingRecovery() {
  const DemoScene scene = build_demo_scene();
  const Vector6d bounds = demo_perturbation_bounds();
  int ok = 0, worst_it = 0;
  double worst_pos = 0.0, worst_ang = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const CameraPose init = perturb_pose(scene.truth, bounds, rng);
    try {
      const PoseEstimate est =
          estimate_pose(scene.map, scene.features, init, scene.camera, scene.options);
      const double pe = oracle::pose_position_error(est.pose, scene.truth);
      const double ae = oracle::pose_angle_error_deg(est.pose, scene.truth);
      worst_pos = std::max(worst_pos, pe);
      worst_ang = std::max(worst_ang, ae);
      worst_it = std::max(worst_it, est.report.solver.iterations);
      if (pe <= 0.01 && ae <= 0.05 && est.report.solver.iterations <= 50) ++ok;
    } catch (const Error&) {
    }
  }

  // Ground-constraint ablation on the poles-only scene.
  CameraPose init = scene.truth;
  init.center += Eigen::Vector3d(0.3, -0.2, 0.1);
  init.yaw += deg_to_rad(1.0);
  auto attempt = [&](double lambda) {
    MatchingOptions o = scene.options;
    o.lambda_n = lambda;
    try {
      const PoseEstimate est =
          estimate_pose(scene.map, scene.sparse_features, init, scene.camera, o);
      return est.report.solver.iterations <= 50 &&
             oracle::pose_position_error(est.pose, scene.truth) <= 0.01 &&
             oracle::pose_angle_error_deg(est.pose, scene.truth) <= 0.05;
    } catch (const MatchingError&) {
      return false;
    }
  };
  const bool without = attempt(0.0), with = attempt(0.001);
  return {ok == 50 && !without && with,
          std::to_string(ok) + "/50 recovered (worst " + Sci(worst_pos) + " m, " + Sci(worst_ang) +
              " deg, " + std::to_string(worst_it) + " it); sparse scene lambda 0 " +
              (without ? "passes" : "fails") + ", lambda 0.001 " + (with ? "passes" : "fails")};
}

Outcome ZeroNoise() {
  const Scenario sc = build_preset(Preset::Urban);
  const SensorSuite suite = SensorSuite::noiseless();
  double worst = 0.0;
  int failed = 0;
  std::size_t checked = 0;
  bool empty_tick = false;
  for (FusionMode mode : kAllFusionModes) {
    const TrialResult tr = run_trial(sc, suite, Config(mode, suite), kSeed);
    failed += tr.failed_ticks();
    for (const auto& tick : tr.ticks) {
      std::size_t here = 0;
      for (const auto& e : tick.entries) {
        if (!e.estimate) continue;
        worst = std::max(worst, (*e.estimate - e.truth).norm());
        ++here;
      }
      if (here == 0) empty_tick = true;
      checked += here;
    }
  }
  return {failed == 0 && !empty_tick && worst < 1e-6,
          "4 modes x 51 ticks, " + std::to_string(checked) + " estimates, worst error " +
              Sci(worst) + " m, failed ticks " + std::to_string(failed)};
}

Outcome Overlap() {
  const auto t0 = Clock::now();
  const Scenario sc = build_preset(Preset::Overlap);
  const SensorSuite suite;
  const MetricReport l0 = Simulate(sc, suite, FusionMode::Local, kTrials, kSeed, "cv0");
  const MetricReport l1 = Simulate(sc, suite, FusionMode::Local, kTrials, kSeed, "cv1");
  const MetricReport coop = Simulate(sc, suite, FusionMode::Distributed, kTrials, kSeed);
  const double seconds = SecondsSince(t0);
  Thresholds th;
  th.min_improvement = 0.10;
  const Comparison c = compare_modes({l0, l1}, coop, th);
  std::string detail = "local@cv0 " + (l0.targets ? Num(l0.targets->rmse) : "n/a") +
                       ", local@cv1 " + (l1.targets ? Num(l1.targets->rmse) : "n/a") +
                       ", distributed " + (coop.targets ? Num(coop.targets->rmse) : "n/a");
  if (c.target_improvement)
    detail += ", improvement " + Num(100.0 * *c.target_improvement, 1) + "%";
  detail += ", " + Num(seconds, 1) + " s";
  return {c.passed() && seconds < 120.0, detail};
}

Outcome BlindSpots() {
  const SensorSuite suite;
  const double limit = 2.0 * suite.perception.sigma;
  bool pass = true;
  std::string detail;
  for (Preset p : {Preset::BlindSpot1, Preset::BlindSpot2}) {
    const Scenario sc = build_preset(p);
    const auto local =
        run_monte_carlo(sc, suite, Config(FusionMode::Local, suite, "cv0"), kTrials, kSeed);
    std::size_t local_estimates = 0;
    for (const auto& tr : local) {
      for (const auto& tick : tr.ticks) {
        for (const auto& e : tick.entries) local_estimates += e.id == "tgt" && e.estimate;
      }
    }
    const MetricReport coop = Simulate(sc, suite, FusionMode::Distributed, kTrials, kSeed);
    const bool ok = local_estimates == 0 && coop.targets && coop.targets->rmse < limit &&
                    coop.failed_trials == 0;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += sc.name + ": ego-only target estimates " + std::to_string(local_estimates) +
              ", cooperative target rmse " + (coop.targets ? Num(coop.targets->rmse) : "n/a") +
              " < " + Num(limit, 2);
  }
  return {pass, detail};
}

Outcome UrbanSuburbanOrdering() {
  const SensorSuite suite;
  const MetricReport urban =
      Simulate(build_preset(Preset::Urban), suite, FusionMode::Distributed, kTrials, kSeed);
  const MetricReport suburban =
      Simulate(build_preset(Preset::Suburban), suite, FusionMode::Distributed, kTrials, kSeed);
  const MetricReport gnss =
      Simulate(build_preset(Preset::Urban), suite, FusionMode::GnssOnly, kTrials, kSeed);
  if (!urban.self || !suburban.self || !gnss.self) return {false, "missing self estimates"};
  auto margin_ok = [](const Aggregate& lo, const Aggregate& hi) {
    return hi.rmse - lo.rmse >= 3.0 * std::hypot(lo.standard_error, hi.standard_error);
  };
  const bool ok = margin_ok(*urban.self, *suburban.self) && margin_ok(*urban.self, *gnss.self) &&
                  margin_ok(*suburban.self, *gnss.self);
  auto show = [](const Aggregate& a) { return Num(a.rmse) + " +- " + Num(a.standard_error); };
  return {ok, "self rmse urban " + show(*urban.self) + ", suburban " + show(*suburban.self) +
                  ", gnss-only " + show(*gnss.self)};
}

// Entity values in block-component order.
Eigen::VectorXd BlockValues(const DrivingState& s, const std::string& id, ComponentMask mask) {
  Eigen::VectorXd full;
  if (auto it = s.vehicles.find(id); it != s.vehicles.end()) {
    full = it->second.to_vector();
  } else if (auto ob = s.obstacles.find(id); ob != s.obstacles.end()) {
    full = ob->second;
  } else {
    full = s.features.at(id);
  }
  const auto idx = mask_indices(mask);
  Eigen::VectorXd out(Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(Eigen::Index(k)) = full(idx[k]);
  return out;
}

Outcome DistributedVsCentralized() {
  const Scenario sc = build_preset(Preset::Overlap);
  const SensorSuite suite;
  const FusionConfig dist_cfg = simulation_fusion_config(FusionMode::Distributed, suite);
  const FusionConfig cent_cfg = simulation_fusion_config(FusionMode::Centralized, suite);
  const auto connected = sc.connected_ids();
  double sum_sq = 0.0, worst_tick = 0.0;
  std::size_t n = 0;
  int cost_violations = 0, missing = 0;
  for (int k = 0; k < sc.tick_count(); ++k) {
    const double t = k * sc.tick;
    std::vector<VehicleSensing> sensing;
    for (std::size_t v = 0; v < connected.size(); ++v) {
      std::mt19937_64 rng(stream_seed(trial_seed(kSeed, 0), std::uint64_t(k), v + 1));
      sensing.push_back(sense(sc, connected[v], t, suite, rng));
    }
    std::vector<FusionMessage> inbox;
    const VehicleSensing* host = nullptr;
    for (const auto& s : sensing) {
      if (s.vehicle == sc.ego) {
        host = &s;
      } else {
        inbox.push_back(local_estimate(s, sc.map, dist_cfg).message);
      }
    }
    const FusedResult dist = host_fuse(*host, inbox, sc.map, dist_cfg);

    std::vector<ObservationRecord> records;
    std::map<std::string, VehiclePose> known;
    for (const auto& s : sensing) {
      const auto own = detail::own_factors(s, sc.map, cent_cfg, nullptr, nullptr);
      records.insert(records.end(), own.begin(), own.end());
      known.emplace(s.vehicle, s.pose_guess);
    }
    FactorGraph graph;
    const JointEstimate cent =
        detail::solve_records(known, records, {}, sc.map, t, cent_cfg, nullptr, &graph);
    const auto marginals = marginal_covariance(graph, cent.state);

    // Distributed values placed into the centralized layout.
    DrivingState as_cent = cent.state;
    double tick_sq = 0.0;
    std::size_t tick_n = 0;
    for (const auto& [id, block] : marginals) {
      if (!dist.state.has(id)) {
        ++missing;
        continue;
      }
      Eigen::VectorXd d = BlockValues(dist.state, id, block.components) -
                          BlockValues(cent.state, id, block.components);
      const auto idx = mask_indices(block.components);
      for (std::size_t c = 0; c < idx.size(); ++c) {
        if (as_cent.vehicles.contains(id) && idx[c] >= 3) {
          d(Eigen::Index(c)) = normalize_angle(d(Eigen::Index(c)));
        }
        const double z =
            d(Eigen::Index(c)) / std::sqrt(block.covariance(Eigen::Index(c), Eigen::Index(c)));
        tick_sq += z * z;
        ++tick_n;
      }
      if (auto it = dist.state.vehicles.find(id); it != dist.state.vehicles.end()) {
        as_cent.vehicles[id] = it->second;
      } else if (auto ob = dist.state.obstacles.find(id); ob != dist.state.obstacles.end()) {
        as_cent.obstacles[id] = ob->second;
      }
    }
    sum_sq += tick_sq;
    n += tick_n;
    if (tick_n > 0) worst_tick = std::max(worst_tick, std::sqrt(tick_sq / double(tick_n)));
    if (total_cost(graph, cent.state) > total_cost(graph, as_cent) * (1.0 + 1e-9) + 1e-12) {
      ++cost_violations;
    }
  }
  const double rms = n > 0 ? std::sqrt(sum_sq / double(n)) : 1e9;

  const Scenario urban = build_preset(Preset::Urban);
  const std::size_t dist_bytes =
      run_trial(urban, suite, Config(FusionMode::Distributed, suite), trial_seed(kSeed, 0)).bytes();
  const std::size_t cent_bytes =
      run_trial(urban, suite, Config(FusionMode::Centralized, suite), trial_seed(kSeed, 0)).bytes();

  return {rms <= 0.10 && missing == 0 && cost_violations == 0 && dist_bytes < cent_bytes &&
              dist_bytes > 0,
          "overlap scaled rms " + Sci(rms) + " over " + std::to_string(n) +
              " components (worst tick " + Sci(worst_tick) +
              "), centralized cost above distributed on " + std::to_string(cost_violations) +
              " ticks; urban bytes distributed " + std::to_string(dist_bytes) + " < centralized " +
              std::to_string(cent_bytes)};
}

Outcome EstimatorProperties() {
  std::mt19937_64 rng(kSeed);
  const double gap = oracle::whitened_cost_gap(rng, 100);
  const oracle::MonotonicityResult mono = oracle::information_monotonicity(rng, 100);
  const oracle::PermutationResult perm = oracle::permutation_invariance(rng, 100);
  // Step tolerance of the solver, relative to 1 + |x|.
  const double step_tol = SolverOptions{}.step_tolerance;
  return {
      gap < 1e-10 && mono.violations == 0 && mono.compared > 0 && perm.max_state_gap <= step_tol,
      "whitened cost gap " + Sci(gap) + ", monotonicity " + std::to_string(mono.violations) + "/" +
          std::to_string(mono.compared) + " violations, permutation gap " +
          Sci(perm.max_state_gap)};
}

Outcome Determinism() {
  const fs::path dir = oracle::scratch_dir("acceptance");
  auto run = [&](const std::string& name) {
    const std::string cmd = "'" + std::string(MAPCONTAINER_CLI) +
                            "' simulate --preset overlap --mode distributed --trials 3 --seed " +
                            std::to_string(kSeed) + " --out '" + (dir / name).string() +
                            "' > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  const bool ran = run("a") && run("b");
  int same = 0, total = 0;
  if (ran) {
    for (const char* f : {"trials.csv", "metrics.csv", "summary.csv"}) {
      ++total;
      same += read_text_file((dir / "a" / f).string()) == read_text_file((dir / "b" / f).string());
    }
  }
  fs::remove_all(dir);
  return {ran && same == total && total == 3,
          ran ? std::to_string(same) + "/" + std::to_string(total) + " CSVs byte-identical"
              : "simulate failed"};
}

}  // namespace
}  // namespace mapcontainer

int main() {
  using namespace mapcontainer;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"EDT exactness", EdtExactness},
      {"solver sanity", SolverSanity},
      {"map-matching recovery", MapMatchingRecovery},
      {"zero-noise end-to-end", ZeroNoise},
      {"overlap improvement", Overlap},
      {"blind-spot extension", BlindSpots},
      {"urban vs suburban ordering", UrbanSuburbanOrdering},
      {"distributed vs centralized", DistributedVsCentralized},
      {"estimator properties", EstimatorProperties},
      {"determinism", Determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first
              << " - " << o.detail << " [" << Num(SecondsSince(t0), 1) << " s]" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
