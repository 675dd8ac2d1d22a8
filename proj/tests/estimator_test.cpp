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

#include "mapcontainer/estimator.hpp"

#include <algorithm>
#include <random>

#include "gtest/gtest.h"
#include "test_support.hpp"

namespace mapcontainer {
namespace {

Eigen::VectorXd Vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Exact observations of every class for a two-vehicle scene.
struct FullScene {
  DrivingState truth;
  std::vector<ObservationRecord> records;
};

FullScene MakeFullScene() {
  FullScene s;
  s.truth.vehicles["a"] = oracle::level_pose(0.0, 0.0, 0.3);
  s.truth.vehicles["b"] = oracle::level_pose(12.0, 4.0, -0.2);
  s.truth.obstacles["o"] = {6.0, -3.0, 0.0};
  s.truth.features["feature:1"] = {8.0, 7.0, 2.0};
  auto h = [&](const ObservationRecord& r) { return measurement_model(r, s.truth); };
  auto add = [&](SourceClass c, const std::string& obs, const std::string& sub, int dim,
                 double sigma, ComponentMask mask = 0) {
    ObservationRecord r = oracle::make_record(c, obs, sub, Eigen::VectorXd::Zero(dim), sigma, mask);
    r.value = h(r);
    s.records.push_back(r);
  };
  add(SourceClass::Gnss, "a", "a", 2, 1.5);
  add(SourceClass::Gnss, "b", "b", 2, 1.5);
  add(SourceClass::MapToVehicle, "a", "a", 6, 0.05, kPoseComponents);
  add(SourceClass::MapToVehicle, "b", "b", 6, 0.05, kPoseComponents);
  add(SourceClass::VehicleToObstacle, "a", "o", 2, 0.3);
  add(SourceClass::VehicleToObstacle, "b", "o", 2, 0.3);
  add(SourceClass::VehicleToVehicle, "a", "b", 2, 0.3);
  add(SourceClass::VehicleToFeature, "b", "feature:1", 2, 0.3);
  add(SourceClass::MapToFeature, "map", "feature:1", 3, 0.1);
  return s;
}

TEST(MeasurementModelTest, GnssReadsPlanarPosition) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(100.0, 50.0, 1.0);
  const auto r = oracle::make_record(SourceClass::Gnss, "v", "v", Vec({0, 0}), 1.0);
  EXPECT_EQ(measurement_model(r, s), Eigen::Vector2d(100.0, 50.0));
}

TEST(MeasurementModelTest, RelativeObservationIsBodyFrame) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(0.0, 0.0, deg_to_rad(90.0));
  s.obstacles["o"] = {0.0, 10.0, 0.0};
  const auto r = oracle::make_record(SourceClass::VehicleToObstacle, "v", "o", Vec({0, 0}), 1.0);
  const Eigen::VectorXd h = measurement_model(r, s);
  EXPECT_NEAR(h(0), 10.0, 1e-12);
  EXPECT_NEAR(h(1), 0.0, 1e-12);
}

TEST(MeasurementModelTest, MapPriorReadsFeature) {
  DrivingState s;
  s.features["feature:1"] = {10.0, 5.0, 0.0};
  const auto r =
      oracle::make_record(SourceClass::MapToFeature, "map", "feature:1", Vec({0, 0, 0}), 0.1);
  EXPECT_EQ(measurement_model(r, s), Eigen::Vector3d(10.0, 5.0, 0.0));
}

TEST(MeasurementModelTest, AnalyticJacobianMatchesDifferences) {
  const FullScene scene = MakeFullScene();
  FactorGraph g(scene.truth);
  g.add(scene.records);
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = g.layout().flatten(oracle::perturbed(scene.truth, rng, 1.0));
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  g.evaluate(x, &r, &J);
  auto fn = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out;
    g.evaluate(v, &out, nullptr);
    return out;
  };
  EXPECT_LT((J - numeric_jacobian(fn, x, 1e-6)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(WhitenedResidualTest, ZeroWhenConsistent) {
  const FullScene scene = MakeFullScene();
  for (const auto& r : scene.records) {
    EXPECT_LT(whitened_residual(r, scene.truth).norm(), 1e-9) << to_string(r.source);
  }
}

TEST(WhitenedResidualTest, ScalarCase) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(3.0, 0.0, 0.0);
  ObservationRecord r =
      oracle::make_record(SourceClass::MapToVehicle, "v", "v", Vec({5.0}), 2.0, 0x01);
  const Eigen::VectorXd w = whitened_residual(r, s);
  ASSERT_EQ(w.size(), 1);
  EXPECT_DOUBLE_EQ(std::abs(w(0)), 2.0 / std::sqrt(4.0));
}

TEST(WhitenedResidualTest, MatchesExplicitInverse) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    DrivingState s;
    s.features["feature:4"] = {n(rng), n(rng), n(rng)};
    ObservationRecord r = oracle::make_record(SourceClass::MapToFeature, "map", "feature:4",
                                              Vec({n(rng), n(rng), n(rng)}), 1.0);
    r.covariance = oracle::random_spd(3, rng);
    const Eigen::VectorXd e = r.value - s.features["feature:4"];
    const double oracle = e.dot(r.covariance.inverse() * e);
    const double got = whitened_residual(r, s).squaredNorm();
    EXPECT_NEAR(got, oracle, 1e-12 * std::max(1.0, oracle));
  }
}

TEST(TotalCostTest, EqualsSumOfMahalanobisTerms) {
  std::mt19937_64 rng(77);
  EXPECT_LT(oracle::whitened_cost_gap(rng, 100), 1e-10);
}

TEST(SolveJointTest, TwoGnssFixesAverage) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(9.0, 1.0, 0.0);
  FactorGraph g(s);
  g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({10.0, 0.0}), 1.0));
  g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({10.2, 0.0}), 1.0));
  const JointEstimate est = solve_joint(g, s);
  EXPECT_NEAR(est.state.vehicles.at("v").position.x(), 10.1, 1e-9);
  EXPECT_NEAR(est.state.vehicles.at("v").position.y(), 0.0, 1e-9);
  // z, yaw, pitch and roll have no factor and stay at the initial value.
  EXPECT_EQ(est.report.unobservable.size(), 4u);
  EXPECT_EQ(est.state.vehicles.at("v").position.z(), 0.0);
}

TEST(SolveJointTest, NoiselessFullSceneRecoversTruth) {
  const FullScene scene = MakeFullScene();
  FactorGraph g(scene.truth);
  g.add(scene.records);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10; ++k) {
    const DrivingState init = oracle::perturbed(scene.truth, rng, 1.0);
    const JointEstimate est = solve_joint(g, init);
    for (const auto& [id, v] : scene.truth.vehicles) {
      EXPECT_LT((est.state.vehicles.at(id).position - v.position).norm(), 1e-6);
      EXPECT_LT(std::abs(normalize_angle(est.state.vehicles.at(id).yaw - v.yaw)), 1e-6);
    }
    EXPECT_LT((est.state.obstacles.at("o") - scene.truth.obstacles.at("o")).head<2>().norm(), 1e-6);
    EXPECT_LT((est.state.features.at("feature:1") - scene.truth.features.at("feature:1")).norm(),
              1e-6);
  }
}

TEST(SolveJointTest, SecondObserverShrinksObstacleVariance) {
  DrivingState s;
  s.vehicles["a"] = oracle::level_pose(0.0, 0.0, 0.0);
  s.vehicles["b"] = oracle::level_pose(10.0, 0.0, 0.0);
  s.obstacles["o"] = {5.0, 5.0, 0.0};
  auto build = [&](bool both) {
    FactorGraph g(s);
    for (const char* v : {"a", "b"}) {
      g.add(oracle::make_record(SourceClass::MapToVehicle, v, v, s.vehicles.at(v).to_vector(), 1e-4,
                                kPoseComponents));
    }
    ObservationRecord ra =
        oracle::make_record(SourceClass::VehicleToObstacle, "a", "o", Vec({0, 0}), 0.5);
    ra.value = measurement_model(ra, s);
    g.add(ra);
    if (both) {
      ObservationRecord rb =
          oracle::make_record(SourceClass::VehicleToObstacle, "b", "o", Vec({0, 0}), 0.5);
      rb.value = measurement_model(rb, s);
      g.add(rb);
    }
    return g;
  };
  const FactorGraph one = build(false), two = build(true);
  const auto m1 = marginal_covariance(one, solve_joint(one, s).state);
  const auto m2 = marginal_covariance(two, solve_joint(two, s).state);
  const Eigen::MatrixXd c1 = m1.at("o").covariance, c2 = m2.at("o").covariance;
  EXPECT_LT(c2(0, 0), c1(0, 0));
  EXPECT_LT(c2(1, 1), c1(1, 1));
  EXPECT_NEAR(c2(0, 0), 0.25 / 2.0, 1e-5);
}

TEST(SolveJointTest, FactorOrderDoesNotMatter) {
  std::mt19937_64 rng(13);
  const oracle::PermutationResult r = oracle::permutation_invariance(rng, 30);
  EXPECT_LT(r.max_state_gap, 1e-6);
  EXPECT_LT(r.max_cost_gap, 1e-8);
}

TEST(SolveJointTest, RejectsUnknownEntities) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(0.0, 0.0, 0.0);
  FactorGraph g(s);
  EXPECT_THROW(g.add(oracle::make_record(SourceClass::Gnss, "w", "w", Vec({0, 0}), 1.0)),
               ValidationError);
  EXPECT_THROW(
      g.add(oracle::make_record(SourceClass::VehicleToObstacle, "v", "o", Vec({0, 0}), 1.0)),
      ValidationError);
  ObservationRecord bad = oracle::make_record(SourceClass::Gnss, "v", "v", Vec({0, 0}), 1.0);
  bad.covariance(0, 0) = -1.0;
  EXPECT_THROW(g.add(bad), ValidationError);
  EXPECT_THROW(g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({0, 0, 0}), 1.0)),
               ValidationError);
}

TEST(MarginalCovarianceTest, SingleGnss) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(0.0, 0.0, 0.0);
  FactorGraph g(s);
  g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({1.0, 2.0}), 1.5));
  const auto m = marginal_covariance(g, solve_joint(g, s).state);
  const MarginalBlock& b = m.at("v");
  EXPECT_EQ(b.components, kPlanarComponents);
  EXPECT_NEAR(b.covariance(0, 0), 2.25, 1e-12);
  EXPECT_NEAR(b.covariance(1, 1), 2.25, 1e-12);
  EXPECT_NEAR(b.covariance(0, 1), 0.0, 1e-12);
}

TEST(MarginalCovarianceTest, TwoFactorsHalveVariance) {
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(0.0, 0.0, 0.0);
  FactorGraph g(s);
  g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({1.0, 2.0}), 1.5));
  g.add(oracle::make_record(SourceClass::Gnss, "v", "v", Vec({1.4, 2.2}), 1.5));
  const auto m = marginal_covariance(g, solve_joint(g, s).state);
  EXPECT_NEAR(m.at("v").covariance(0, 0), 2.25 / 2.0, 1e-12);
  EXPECT_NEAR(m.at("v").covariance(1, 1), 2.25 / 2.0, 1e-12);
}

TEST(MarginalCovarianceTest, MatchesDenseInverse) {
  const FullScene scene = MakeFullScene();
  FactorGraph g(scene.truth);
  g.add(scene.records);
  const JointEstimate est = solve_joint(g, scene.truth);
  const auto marginals = marginal_covariance(g, est.state);
  Eigen::MatrixXd J;
  g.evaluate(g.layout().flatten(est.state), nullptr, &J);
  const auto& free = est.report.free_components;
  Eigen::MatrixXd Jf(J.rows(), Eigen::Index(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) Jf.col(Eigen::Index(k)) = J.col(free[k]);
  const Eigen::MatrixXd cov = (Jf.transpose() * Jf).inverse();
  for (const auto& [id, block] : marginals) {
    const auto& e = g.layout().at(id);
    std::vector<Eigen::Index> rows;
    for (std::size_t k = 0; k < free.size(); ++k) {
      if (free[k] >= e.offset && free[k] < e.offset + e.size) rows.push_back(Eigen::Index(k));
    }
    ASSERT_EQ(Eigen::Index(rows.size()), block.covariance.rows());
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < rows.size(); ++b) {
        EXPECT_NEAR(block.covariance(Eigen::Index(a), Eigen::Index(b)), cov(rows[a], rows[b]),
                    1e-9);
      }
    }
  }
}

TEST(MarginalCovarianceTest, InformationMonotonicity) {
  std::mt19937_64 rng(101);
  const oracle::MonotonicityResult r = oracle::information_monotonicity(rng, 100);
  EXPECT_EQ(r.violations, 0);
  EXPECT_GT(r.compared, 200);
}

TEST(MarginalCovarianceTest, SingularThrows) {
  // Only a relative observation: the pair can slide together.
  DrivingState s;
  s.vehicles["v"] = oracle::level_pose(0.0, 0.0, 0.0);
  s.obstacles["o"] = {5.0, 0.0, 0.0};
  FactorGraph g(s);
  g.add(oracle::make_record(SourceClass::VehicleToObstacle, "v", "o", Vec({5.0, 0.0}), 0.3));
  EXPECT_THROW(marginal_covariance(g, s), EstimatorError);
}

}  // namespace
}  // namespace mapcontainer
