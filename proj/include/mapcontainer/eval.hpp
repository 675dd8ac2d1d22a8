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

// RMSE metrics over Monte-Carlo output and mode comparison.
//
// Errors are planar. Target errors are rotated into the perspective
// vehicle's body frame; the rotation leaves the norm unchanged but the
// per-axis values are what the CSV exposes.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mapcontainer/error.hpp"
#include "mapcontainer/estimator.hpp"
#include "mapcontainer/sim.hpp"

namespace mapcontainer {

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Squared errors at one tick of one trial.
struct TickErrors {
  double sum_self = 0.0;
  std::size_t n_self = 0;
  double sum_targets = 0.0;
  std::size_t n_targets = 0;
};

inline TickErrors tick_errors(const TickResult& tick) {
  TickErrors e;
  if (tick.failed) return e;
  const Eigen::Matrix2d Rt = detail::planar_rotation_t(tick.perspective_truth.yaw);
  for (const auto& entry : tick.entries) {
    if (!entry.estimate) continue;
    const Eigen::Vector2d d = entry.estimate->head<2>() - entry.truth.head<2>();
    if (entry.connected) {
      e.sum_self += d.squaredNorm();
      ++e.n_self;
    } else if (entry.visible) {
      e.sum_targets += (Rt * d).squaredNorm();
      ++e.n_targets;
    }
  }
  return e;
}

/// Self-localization RMSE at tick over all trials and connected vehicles.
inline double rmse_self(const std::vector<TrialResult>& trials, int tick) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& tr : trials) {
    if (tick < 0 || std::size_t(tick) >= tr.ticks.size()) continue;
    const TickErrors e = tick_errors(tr.ticks[std::size_t(tick)]);
    sum += e.sum_self;
    n += e.n_self;
  }
  if (n == 0) throw EvaluationError("rmse_self: no estimates at tick " + std::to_string(tick));
  return std::sqrt(sum / double(n));
}

/// Target RMSE at tick over all trials and targets inside some perception area.
inline double rmse_targets(const std::vector<TrialResult>& trials, int tick) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& tr : trials) {
    if (tick < 0 || std::size_t(tick) >= tr.ticks.size()) continue;
    const TickErrors e = tick_errors(tr.ticks[std::size_t(tick)]);
    sum += e.sum_targets;
    n += e.n_targets;
  }
  if (n == 0) throw EvaluationError("rmse_targets: no observed targets at tick " + std::to_string(tick));
  return std::sqrt(sum / double(n));
}

struct TickMetric {
  int tick = 0;
  double t = 0.0;
  std::optional<double> rmse_self;
  std::optional<double> rmse_targets;
  std::size_t n_targets = 0;  // target estimates pooled over trials
};

/// RMSE pooled over all ticks, with the Monte-Carlo standard error taken
/// from the spread of per-trial mean squared errors.
struct Aggregate {
  double rmse = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
  std::size_t trials = 0;
};

struct MetricReport {
  std::string scenario;
  FusionMode mode = FusionMode::Distributed;
  std::string perspective;
  std::vector<std::uint64_t> seeds;
  std::size_t failed_trials = 0;
  std::vector<TickMetric> ticks;
  std::optional<Aggregate> self;
  std::optional<Aggregate> targets;
  double mean_bytes = 0.0;  // per trial
  std::size_t matching_failures = 0;
};

namespace detail {

inline std::optional<Aggregate> aggregate(const std::vector<std::pair<double, std::size_t>>& per_trial) {
  Aggregate a;
  std::vector<double> mse;
  double sum = 0.0;
  for (const auto& [s, n] : per_trial) {
    if (n == 0) continue;
    mse.push_back(s / double(n));
    sum += s;
    a.samples += n;
  }
  if (a.samples == 0) return std::nullopt;
  a.trials = mse.size();
  const double mean_sq = sum / double(a.samples);
  a.rmse = std::sqrt(mean_sq);
  if (mse.size() > 1 && a.rmse > 0.0) {
    double mean = 0.0;
    for (double v : mse) mean += v;
    mean /= double(mse.size());
    double var = 0.0;
    for (double v : mse) var += (v - mean) * (v - mean);
    var /= double(mse.size() - 1);
    const double se_mse = std::sqrt(var / double(mse.size()));
    a.standard_error = se_mse / (2.0 * a.rmse);
  }
  return a;
}

}  // namespace detail

inline MetricReport evaluate(const std::vector<TrialResult>& trials, const std::string& scenario) {
  if (trials.empty()) throw EvaluationError("evaluate: no trials");
  MetricReport r;
  r.scenario = scenario;
  r.mode = trials.front().mode;
  r.perspective = trials.front().perspective;
  std::size_t n_ticks = 0;
  std::vector<std::pair<double, std::size_t>> self, targets;
  double bytes = 0.0;
  for (const auto& tr : trials) {
    if (tr.mode != r.mode || tr.perspective != r.perspective) {
      throw EvaluationError("evaluate: trials mix modes or perspectives");
    }
    r.seeds.push_back(tr.seed);
    if (tr.failed_ticks() > 0) ++r.failed_trials;
    n_ticks = std::max(n_ticks, tr.ticks.size());
    std::pair<double, std::size_t> s{0.0, 0}, g{0.0, 0};
    for (const auto& tick : tr.ticks) {
      const TickErrors e = tick_errors(tick);
      s.first += e.sum_self;
      s.second += e.n_self;
      g.first += e.sum_targets;
      g.second += e.n_targets;
      r.matching_failures += tick.matching_failures;
    }
    self.push_back(s);
    targets.push_back(g);
    bytes += double(tr.bytes());
  }
  r.mean_bytes = bytes / double(trials.size());
  r.self = detail::aggregate(self);
  r.targets = detail::aggregate(targets);
  for (std::size_t k = 0; k < n_ticks; ++k) {
    TickMetric m;
    m.tick = int(k);
    for (const auto& tr : trials) {
      if (k < tr.ticks.size()) {
        m.t = tr.ticks[k].t;
        m.n_targets += tick_errors(tr.ticks[k]).n_targets;
      }
    }
    try {
      m.rmse_self = rmse_self(trials, int(k));
    } catch (const EvaluationError&) {
    }
    try {
      m.rmse_targets = rmse_targets(trials, int(k));
    } catch (const EvaluationError&) {
    }
    r.ticks.push_back(m);
  }
  return r;
}

/// Relative improvement of coop over single; negative when coop is worse.
inline double improvement(double single, double coop) {
  if (!(single > 0.0)) throw EvaluationError("improvement: single-vehicle RMSE must be positive");
  return (single - coop) / single;
}

struct Thresholds {
  std::optional<double> min_improvement;  // target RMSE, coop vs best single
  std::optional<double> max_target_rmse;  // coop
  std::optional<double> max_self_rmse;    // coop
  std::size_t max_failed_trials = 0;
};

inline Thresholds thresholds_from_json(const nlohmann::json& j) {
  try {
    Thresholds t;
    if (j.contains("min_improvement")) t.min_improvement = j.at("min_improvement").get<double>();
    if (j.contains("max_target_rmse")) t.max_target_rmse = j.at("max_target_rmse").get<double>();
    if (j.contains("max_self_rmse")) t.max_self_rmse = j.at("max_self_rmse").get<double>();
    t.max_failed_trials = j.value("max_failed_trials", std::size_t(0));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("thresholds: ") + e.what());
  }
}

struct Comparison {
  std::vector<const MetricReport*> single;
  const MetricReport* coop = nullptr;
  std::optional<double> best_single_target_rmse;
  std::optional<double> target_improvement;
  std::vector<std::string> failures;  // empty when every threshold holds
  bool passed() const { return failures.empty(); }
};

/// Side-by-side comparison. Reports must share scenario and seeds.
inline Comparison compare_modes(const std::vector<MetricReport>& single, const MetricReport& coop,
                                const Thresholds& th = {}) {
  Comparison c;
  c.coop = &coop;
  for (const auto& s : single) {
    if (s.scenario != coop.scenario || s.seeds != coop.seeds || s.ticks.size() != coop.ticks.size()) {
      throw EvaluationError("compare_modes: reports differ in scenario, seeds or tick count");
    }
    c.single.push_back(&s);
    if (s.targets && (!c.best_single_target_rmse || s.targets->rmse < *c.best_single_target_rmse)) {
      c.best_single_target_rmse = s.targets->rmse;
    }
  }
  if (c.best_single_target_rmse && coop.targets && *c.best_single_target_rmse > 0.0) {
    c.target_improvement = improvement(*c.best_single_target_rmse, coop.targets->rmse);
  }
  auto fmt = [](double v) { return detail::fixed(v, 4); };
  if (th.min_improvement) {
    if (!c.target_improvement) {
      c.failures.push_back("improvement unavailable");
    } else if (*c.target_improvement < *th.min_improvement) {
      c.failures.push_back("improvement " + fmt(*c.target_improvement) + " < " + fmt(*th.min_improvement));
    }
  }
  if (th.max_target_rmse && (!coop.targets || coop.targets->rmse > *th.max_target_rmse)) {
    c.failures.push_back("target rmse above " + fmt(*th.max_target_rmse));
  }
  if (th.max_self_rmse && (!coop.self || coop.self->rmse > *th.max_self_rmse)) {
    c.failures.push_back("self rmse above " + fmt(*th.max_self_rmse));
  }
  if (coop.failed_trials > th.max_failed_trials) {
    c.failures.push_back(std::to_string(coop.failed_trials) + " failed trials");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string optional_fixed(const std::optional<double>& v) {
  return v ? fixed(*v) : std::string();
}

inline std::string report_label(const MetricReport& r) {
  return std::string(to_string(r.mode)) + "@" + r.perspective;
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "t,mode,rmse_self,rmse_targets,n_targets\n";
  for (const auto& r : reports) {
    for (const auto& m : r.ticks) {
      os << detail::fixed(m.t, 3) << ',' << to_string(r.mode) << ','
         << detail::optional_fixed(m.rmse_self) << ',' << detail::optional_fixed(m.rmse_targets)
         << ',' << m.n_targets << '\n';
    }
  }
  return os.str();
}

/// Rows aligned by tick: one rmse_targets column per report.
inline std::string comparison_csv(const Comparison& c) {
  std::vector<const MetricReport*> all = c.single;
  all.push_back(c.coop);
  std::ostringstream os;
  os << "t";
  for (const auto* r : all) os << ",rmse_targets:" << detail::report_label(*r);
  for (const auto* r : all) os << ",rmse_self:" << detail::report_label(*r);
  os << '\n';
  for (std::size_t k = 0; k < c.coop->ticks.size(); ++k) {
    os << detail::fixed(c.coop->ticks[k].t, 3);
    for (const auto* r : all) os << ',' << detail::optional_fixed(r->ticks[k].rmse_targets);
    for (const auto* r : all) os << ',' << detail::optional_fixed(r->ticks[k].rmse_self);
    os << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "scenario,mode,perspective,trials,failed_trials,rmse_self,se_self,rmse_targets,"
        "se_targets,mean_bytes\n";
  for (const auto& r : reports) {
    os << r.scenario << ',' << to_string(r.mode) << ',' << r.perspective << ',' << r.seeds.size()
       << ',' << r.failed_trials << ','
       << (r.self ? detail::fixed(r.self->rmse) : "") << ','
       << (r.self ? detail::fixed(r.self->standard_error) : "") << ','
       << (r.targets ? detail::fixed(r.targets->rmse) : "") << ','
       << (r.targets ? detail::fixed(r.targets->standard_error) : "") << ','
       << detail::fixed(r.mean_bytes, 1) << '\n';
  }
  return os.str();
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  using nlohmann::json;
  auto agg = [](const std::optional<Aggregate>& a) -> json {
    if (!a) return nullptr;
    return {{"rmse", a->rmse}, {"standard_error", a->standard_error}, {"samples", a->samples},
            {"trials", a->trials}};
  };
  auto opt = [](const std::optional<double>& v) -> json { return v ? json(*v) : json(nullptr); };
  json ticks = json::array();
  for (const auto& m : r.ticks) {
    ticks.push_back({{"tick", m.tick}, {"t", m.t}, {"rmse_self", opt(m.rmse_self)},
                     {"rmse_targets", opt(m.rmse_targets)}, {"n_targets", m.n_targets}});
  }
  return {{"scenario", r.scenario},
          {"mode", to_string(r.mode)},
          {"perspective", r.perspective},
          {"seeds", r.seeds},
          {"failed_trials", r.failed_trials},
          {"matching_failures", r.matching_failures},
          {"mean_bytes", r.mean_bytes},
          {"self", agg(r.self)},
          {"targets", agg(r.targets)},
          {"ticks", ticks}};
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.mode = fusion_mode_from_string(j.at("mode").get<std::string>());
    r.perspective = j.at("perspective").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.failed_trials = j.at("failed_trials").get<std::size_t>();
    r.matching_failures = j.value("matching_failures", std::size_t(0));
    r.mean_bytes = j.at("mean_bytes").get<double>();
    auto agg = [](const nlohmann::json& a) -> std::optional<Aggregate> {
      if (a.is_null()) return std::nullopt;
      return Aggregate{a.at("rmse").get<double>(), a.at("standard_error").get<double>(),
                       a.at("samples").get<std::size_t>(), a.at("trials").get<std::size_t>()};
    };
    auto opt = [](const nlohmann::json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    r.self = agg(j.at("self"));
    r.targets = agg(j.at("targets"));
    for (const auto& m : j.at("ticks")) {
      r.ticks.push_back({m.at("tick").get<int>(), m.at("t").get<double>(), opt(m.at("rmse_self")),
                         opt(m.at("rmse_targets")), m.at("n_targets").get<std::size_t>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric report: ") + e.what());
  }
}

/// RMSE against time, one polyline per report.
inline std::string svg_plot(const std::vector<MetricReport>& reports, bool targets) {
  constexpr double W = 640, H = 360, L = 60, R = 20, T = 30, B = 40;
  double t_max = 0.0, y_max = 0.0;
  for (const auto& r : reports) {
    for (const auto& m : r.ticks) {
      const auto& v = targets ? m.rmse_targets : m.rmse_self;
      t_max = std::max(t_max, m.t);
      if (v) y_max = std::max(y_max, *v);
    }
  }
  if (t_max <= 0.0) t_max = 1.0;
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.1;
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">t [s]</text>\n"
     << "<text x=\"12\" y=\"" << T - 10 << "\">" << (targets ? "target" : "self")
     << " RMSE [m], max " << detail::fixed(y_max, 3) << "</text>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& m : reports[i].ticks) {
      const auto& v = targets ? m.rmse_targets : m.rmse_self;
      if (!v) continue;
      os << detail::fixed(L + (W - L - R) * m.t / t_max, 2) << ','
         << detail::fixed(H - B - (H - T - B) * *v / y_max, 2) << ' ';
    }
    os << "\"/>\n<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * double(i) << "\" fill=\""
       << color << "\">" << detail::report_label(reports[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mapcontainer
