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
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "mapcontainer/error.hpp"

namespace mapcontainer {

using ResidualFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFunction = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Stacked residual f(x); the solver minimizes f(x)^T f(x).
struct LeastSquaresProblem {
  ResidualFunction residual;
  JacobianFunction jacobian;       // optional; central differences otherwise
  Eigen::Index dimension = 0;
  Eigen::VectorXd jacobian_steps;  // optional per-component difference steps
};

struct SolverOptions {
  double initial_damping = 1e-3;
  double damping_increase = 2.0;
  double damping_decrease = 3.0;
  double damping_ceiling = 1e9;
  double damping_floor = 1e-12;
  int max_iterations = 100;
  double cost_tolerance = 1e-10;  // relative decrease
  double step_tolerance = 1e-8;   // relative to |x|
  double gradient_tolerance = 1e-8;

  void validate() const {
    if (!(initial_damping > 0.0)) throw ValidationError("solver: initial damping must be > 0");
    if (!(damping_increase > 1.0) || !(damping_decrease > 1.0)) {
      throw ValidationError("solver: damping factors must be > 1");
    }
    if (max_iterations < 0) throw ValidationError("solver: negative iteration budget");
  }
};

enum class ConvergenceReason { CostTol, StepTol, GradTol, MaxIter, Singular };

inline std::string_view to_string(ConvergenceReason r) {
  switch (r) {
    case ConvergenceReason::CostTol: return "cost_tolerance";
    case ConvergenceReason::StepTol: return "step_tolerance";
    case ConvergenceReason::GradTol: return "gradient_tolerance";
    case ConvergenceReason::MaxIter: return "max_iterations";
    case ConvergenceReason::Singular: return "singular";
  }
  return "?";
}

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  ConvergenceReason reason = ConvergenceReason::MaxIter;
  std::vector<double> cost_trace;  // initial cost, then one entry per accepted step
  double final_damping = 0.0;

  bool converged() const {
    return reason == ConvergenceReason::CostTol || reason == ConvergenceReason::StepTol ||
           reason == ConvergenceReason::GradTol;
  }
};

struct SolveResult {
  Eigen::VectorXd x;
  SolveReport report;
};

/// Central differences: column j = (f(x + h_j e_j) - f(x - h_j e_j)) / (2 h_j).
inline Eigen::MatrixXd numeric_jacobian(const ResidualFunction& fn, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& steps) {
  if (steps.size() != x.size()) throw ValidationError("numeric jacobian: step size mismatch");
  Eigen::VectorXd xp = x;
  Eigen::MatrixXd J;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = steps(j);
    xp(j) = x(j) + h;
    const Eigen::VectorXd fp = fn(xp);
    xp(j) = x(j) - h;
    const Eigen::VectorXd fm = fn(xp);
    xp(j) = x(j);
    if (j == 0) J.resize(fp.size(), x.size());
    if (fp.size() != J.rows() || fm.size() != J.rows()) {
      throw ValidationError("numeric jacobian: residual length changed");
    }
    J.col(j) = (fp - fm) / (2.0 * h);
  }
  if (!J.allFinite()) throw NumericError("numeric jacobian: non-finite entry");
  return J;
}

inline Eigen::MatrixXd numeric_jacobian(const ResidualFunction& fn, const Eigen::VectorXd& x,
                                        double step = 1e-6) {
  return numeric_jacobian(fn, x, Eigen::VectorXd::Constant(x.size(), step));
}

/// Levenberg-Marquardt on the damped normal equations
/// (J^T J + lambda I) dx = -J^T f. A step is accepted iff the cost decreases.
inline SolveResult solve(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                         const SolverOptions& opts = {}) {
  opts.validate();
  if (x0.size() != problem.dimension) throw ValidationError("solver: x0 dimension mismatch");
  auto evaluate = [&](const Eigen::VectorXd& x) { return problem.residual(x); };
  auto jacobian = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    if (problem.jacobian) {
      Eigen::MatrixXd J = problem.jacobian(x);
      if (!J.allFinite()) throw NumericError("solver: non-finite jacobian");
      return J;
    }
    const Eigen::VectorXd steps = problem.jacobian_steps.size() == x.size()
                                      ? problem.jacobian_steps
                                      : Eigen::VectorXd::Constant(x.size(), 1e-6);
    return numeric_jacobian(problem.residual, x, steps);
  };

  SolveResult out;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd f = evaluate(x);
  if (!f.allFinite() || !x.allFinite()) throw NumericError("solver: non-finite residual at x0");
  double cost = f.squaredNorm();
  SolveReport& rep = out.report;
  rep.initial_cost = cost;
  rep.cost_trace.push_back(cost);
  double lambda = opts.initial_damping;
  const Eigen::Index n = x.size();

  bool done = false;
  if (n == 0 || f.size() == 0) {
    rep.reason = ConvergenceReason::GradTol;
    done = true;
  }
  while (!done) {
    if (rep.iterations >= opts.max_iterations) {
      rep.reason = ConvergenceReason::MaxIter;
      break;
    }
    const Eigen::MatrixXd J = jacobian(x);
    const Eigen::VectorXd g = J.transpose() * f;
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      rep.reason = ConvergenceReason::GradTol;
      break;
    }
    const Eigen::MatrixXd H = J.transpose() * J;
    ++rep.iterations;
    while (true) {
      Eigen::MatrixXd A = H;
      A.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      const bool ok = llt.info() == Eigen::Success &&
                      llt.matrixL().toDenseMatrix().diagonal().cwiseAbs().minCoeff() >= 1e-12;
      if (!ok) {
        lambda *= opts.damping_increase;
        if (lambda > opts.damping_ceiling) {
          rep.reason = ConvergenceReason::Singular;
          done = true;
          break;
        }
        continue;
      }
      const Eigen::VectorXd dx = -llt.solve(g);
      if (dx.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance)) {
        rep.reason = ConvergenceReason::StepTol;
        done = true;
        break;
      }
      const Eigen::VectorXd x_new = x + dx;
      const Eigen::VectorXd f_new = evaluate(x_new);
      const double cost_new = f_new.allFinite() ? f_new.squaredNorm()
                                                : std::numeric_limits<double>::infinity();
      if (cost_new < cost) {
        const double decrease = cost - cost_new;
        const double previous = cost;
        x = x_new;
        f = f_new;
        cost = cost_new;
        rep.cost_trace.push_back(cost);
        lambda = std::max(lambda / opts.damping_decrease, opts.damping_floor);
        if (cost == 0.0 || decrease <= opts.cost_tolerance * previous) {
          rep.reason = ConvergenceReason::CostTol;
          done = true;
        }
        break;
      }
      lambda *= opts.damping_increase;
      if (lambda > opts.damping_ceiling) {
        // No descent direction left at any admissible damping.
        rep.reason = ConvergenceReason::StepTol;
        done = true;
        break;
      }
    }
  }
  rep.final_cost = cost;
  rep.final_damping = lambda;
  out.x = x;
  return out;
}

}  // namespace mapcontainer
