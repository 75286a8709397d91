// Copyright 2026 The dpcd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"
#include "dpcd/data.hpp"
#include "dpcd/graph.hpp"
#include "dpcd/losses.hpp"
#include "dpcd/objective.hpp"
#include "dpcd/privacy.hpp"
#include "dpcd/solver.hpp"

namespace dpcd {

inline std::vector<double> default_mu_grid() {
  return {0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28, 2.56, 5.12, 10.24, 20.48, 40.96};
}

struct ExperimentConfig {
  // Synthetic task.
  std::size_t agents = 100;
  std::size_t dimension = 10;
  double gamma = 0.1;
  double flip_probability = 0.05;
  bool noisy_test_labels = false;

  // Objective and solver. mu <= 0 tunes mu on a validation instance.
  double mu = 0.0;
  std::vector<double> mu_grid = default_mu_grid();
  std::optional<std::size_t> total_ticks;  // non-private ticks; unset picks 100 n
  std::size_t metrics_stride = 0;

  // Private runs. updates_per_agent == 0 tunes T_i on validation.
  std::vector<double> epsilon_bars = {0.15, 0.5, 1.0};
  double delta_bar = std::exp(-5.0);
  std::size_t updates_per_agent = 0;
  std::vector<std::size_t> updates_grid = {1, 2, 5, 10, 20};
  std::vector<WarmStart> private_warm_starts = {WarmStart::kConstant,
                                                WarmStart::kPrivatePropagation};
  double warm_start_constant = 0.0;
  double warm_start_epsilon = 0.05;
  Allocation allocation = Allocation::kUniform;
  RunMode private_mode = RunMode::kPrivateLaplace;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::uint64_t validation_seed = 1000;

  // Local-DP baseline.
  std::vector<double> local_dp_epsilons = {0.1, 1.0, 10.0};
  std::vector<std::size_t> local_dp_dimensions = {10, 20, 50, 100};

  // Recommendation task.
  std::string ratings_path;
  std::string features_path;
  std::size_t feature_dimension = 20;
  std::size_t knn = 10;
  double clip = kDefaultClip;
  std::size_t min_ratings = 0;
  double recsys_mu = 0.04;
  std::vector<double> recsys_epsilons = {1.0, 0.5, 0.1};
  std::size_t recsys_updates_per_agent = 5;

  std::size_t resolved_ticks() const { return total_ticks.value_or(100 * agents); }
};

// One checkpoint of one run.
struct ReportRow {
  std::string series;
  std::uint64_t seed = 0;
  double epsilon_bar = std::numeric_limits<double>::infinity();
  MetricsRow metrics;
};

struct AgentRow {
  std::string series;
  std::uint64_t seed = 0;
  std::size_t agent = 0;
  std::size_t train_size = 0;
  double metric = 0.0;
};

struct SeriesSummary {
  std::string series;
  double epsilon_bar = std::numeric_limits<double>::infinity();
  double mean_metric = 0.0;
  double sd_metric = 0.0;
  double mean_objective = std::numeric_limits<double>::quiet_NaN();
  std::size_t runs = 0;
};

struct ExperimentReport {
  std::string name;
  std::string metric_name;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  std::vector<AgentRow> agents;
  std::vector<SeriesSummary> summary;
  std::vector<std::pair<std::string, std::string>> notes;
  double wall_seconds = 0.0;

  const SeriesSummary& series(const std::string& name) const {
    for (const auto& s : summary) {
      if (s.series == name) return s;
    }
    throw std::out_of_range("no series '" + name + "'");
  }
  bool has_series(const std::string& name) const {
    return std::any_of(summary.begin(), summary.end(),
                       [&](const SeriesSummary& s) { return s.series == name; });
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline std::string fmt_short(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ";" : "") + fmt_short(v[k]);
  return s;
}

inline std::string warm_start_name(WarmStart w) {
  for (const auto& [k, v] : warm_start_names()) {
    if (v == w) return k;
  }
  return "?";
}

inline std::string allocation_name(Allocation a) {
  for (const auto& [k, v] : allocation_names()) {
    if (v == a) return k;
  }
  return "?";
}

inline void add_summary(ExperimentReport& r, const std::string& series, double eps,
                        const std::vector<double>& metrics, const std::vector<double>& objectives) {
  SeriesSummary s;
  s.series = series;
  s.epsilon_bar = eps;
  s.runs = metrics.size();
  double sum = 0.0;
  for (double m : metrics) sum += m;
  s.mean_metric = metrics.empty() ? 0.0 : sum / static_cast<double>(metrics.size());
  double ss = 0.0;
  for (double m : metrics) ss += (m - s.mean_metric) * (m - s.mean_metric);
  s.sd_metric = metrics.size() > 1 ? std::sqrt(ss / static_cast<double>(metrics.size() - 1)) : 0.0;
  if (!objectives.empty()) {
    double o = 0.0;
    for (double v : objectives) o += v;
    s.mean_objective = o / static_cast<double>(objectives.size());
  }
  r.summary.push_back(s);
}

inline void add_rows(ExperimentReport& r, const std::string& series, std::uint64_t seed,
                     double eps, const std::vector<MetricsRow>& rows) {
  for (const auto& m : rows) r.rows.push_back({series, seed, eps, m});
}

inline void add_agents(ExperimentReport& r, const std::string& series, std::uint64_t seed,
                       const std::vector<std::size_t>& sizes, const Evaluation& e) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    r.agents.push_back({series, seed, i, sizes[i], e.per_agent[i]});
  }
}

inline void echo_common(ExperimentReport& r, const ExperimentConfig& c) {
  r.config.emplace_back("n", std::to_string(c.agents));
  r.config.emplace_back("p", std::to_string(c.dimension));
  r.config.emplace_back("gamma", fmt_short(c.gamma));
  r.config.emplace_back("flip_probability", fmt_short(c.flip_probability));
  r.config.emplace_back("noisy_test_labels", c.noisy_test_labels ? "true" : "false");
  std::string seeds;
  for (std::size_t k = 0; k < c.seeds.size(); ++k) {
    seeds += (k ? ";" : "") + std::to_string(c.seeds[k]);
  }
  r.config.emplace_back("seeds", seeds);
  r.seeds = c.seeds;
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic instances
// ---------------------------------------------------------------------------

struct SyntheticInstance {
  SyntheticTask task;
  std::shared_ptr<const NetworkGraph> graph;
  std::vector<LossPtr> losses;
  std::vector<Vector> local_models;

  ObjectiveSpec spec(double mu) const { return ObjectiveSpec(graph, losses, mu); }
  Evaluator evaluator(bool noisy) const {
    return [this, noisy](const ModelStack& m) {
      return evaluate_accuracy(m, task, noisy).aggregate;
    };
  }
};

inline SyntheticInstance make_synthetic_instance(const ExperimentConfig& c, std::size_t dimension,
                                                 std::uint64_t seed) {
  SyntheticConfig sc;
  sc.agents = c.agents;
  sc.dimension = dimension;
  sc.gamma = c.gamma;
  sc.flip_probability = c.flip_probability;
  Rng rng(derive_seed(seed, 100));
  auto [task, graph] = generate_synthetic(sc, rng);
  SyntheticInstance inst;
  inst.task = std::move(task);
  inst.graph = std::make_shared<const NetworkGraph>(std::move(graph));
  inst.losses = make_logistic_losses(inst.task);
  for (const auto& l : inst.losses) inst.local_models.push_back(fit_local_model(*l));
  return inst;
}

namespace detail {

inline RunConfig nonprivate_run_config(const ExperimentConfig& c, std::uint64_t seed) {
  RunConfig rc;
  rc.mode = RunMode::kNonPrivate;
  rc.total_ticks = c.resolved_ticks();
  rc.seed = seed;
  rc.metrics_stride = c.metrics_stride;
  return rc;
}

inline RunConfig private_run_config(const ExperimentConfig& c, std::uint64_t seed, double eps,
                                    std::size_t updates, WarmStart warm) {
  RunConfig rc;
  rc.mode = c.private_mode;
  rc.seed = seed;
  rc.epsilon_bar = eps;
  rc.delta_bar = c.delta_bar;
  rc.updates_per_agent = updates;
  rc.allocation = c.allocation;
  rc.warm_start = warm;
  rc.warm_start_constant = c.warm_start_constant;
  rc.warm_start_epsilon = c.warm_start_epsilon;
  rc.metrics_stride = c.metrics_stride;
  if (c.allocation == Allocation::kOptimal) {
    rc.stopping = StoppingRule::kTickCount;
    rc.total_ticks = updates * c.agents;
  } else {
    rc.stopping = StoppingRule::kBudgetExhausted;
  }
  return rc;
}

inline RunResult run_from(const SyntheticInstance& inst, const ObjectiveSpec& spec,
                          const RunConfig& rc, bool noisy, bool from_local) {
  if (!from_local) return run(spec, rc, inst.evaluator(noisy));
  Rng schedule_rng(derive_seed(rc.seed, 1));
  return run_schedule(spec, rc, ModelStack::from_blocks(inst.local_models),
                      plan_schedule(spec, rc, schedule_rng), inst.evaluator(noisy));
}

}  // namespace detail

// Picks mu from the grid by final non-private validation accuracy, starting
// from local models. Ties go to the smaller mu.
inline double tune_mu(const ExperimentConfig& c) {
  if (c.mu > 0.0) return c.mu;
  detail::require(!c.mu_grid.empty(), "mu grid is empty");
  const SyntheticInstance val = make_synthetic_instance(c, c.dimension, c.validation_seed);
  double best_mu = c.mu_grid.front();
  double best_acc = -1.0;
  for (double mu : c.mu_grid) {
    const ObjectiveSpec spec = val.spec(mu);
    RunConfig rc = detail::nonprivate_run_config(c, c.validation_seed);
    rc.metrics_stride = rc.total_ticks;
    const auto res = detail::run_from(val, spec, rc, c.noisy_test_labels, true);
    const double acc = evaluate_accuracy(res.final_models, val.task, c.noisy_test_labels).aggregate;
    if (acc > best_acc) {
      best_acc = acc;
      best_mu = mu;
    }
  }
  return best_mu;
}

// Picks T_i from the grid by final private validation accuracy.
inline std::size_t tune_updates(const ExperimentConfig& c, double mu, double eps, WarmStart warm) {
  if (c.updates_per_agent > 0) return c.updates_per_agent;
  detail::require(!c.updates_grid.empty(), "T_i grid is empty");
  const SyntheticInstance val = make_synthetic_instance(c, c.dimension, c.validation_seed);
  const ObjectiveSpec spec = val.spec(mu);
  std::size_t best = c.updates_grid.front();
  double best_acc = -1.0;
  for (std::size_t updates : c.updates_grid) {
    RunConfig rc = detail::private_run_config(c, c.validation_seed, eps, updates, warm);
    rc.metrics_stride = std::numeric_limits<std::size_t>::max();
    const auto res = run(spec, rc);
    const double acc = evaluate_accuracy(res.final_models, val.task, c.noisy_test_labels).aggregate;
    if (acc > best_acc) {
      best_acc = acc;
      best = updates;
    }
  }
  return best;
}

// Non-private CD from the local-model warm start; tracks objective and
// accuracy against ticks and transmissions.
inline ExperimentReport exp_nonprivate_convergence(const ExperimentConfig& c) {
  detail::Stopwatch clock;
  ExperimentReport r;
  r.name = "synth-convergence";
  r.metric_name = "accuracy";
  detail::echo_common(r, c);
  const double mu = tune_mu(c);
  r.config.emplace_back("mu", detail::fmt_short(mu));
  r.config.emplace_back("mu_tuned", c.mu > 0.0 ? "false" : "true");
  r.config.emplace_back("T", std::to_string(c.resolved_ticks()));

  std::vector<double> local_acc, np_acc, local_obj, np_obj;
  for (std::uint64_t seed : c.seeds) {
    const SyntheticInstance inst = make_synthetic_instance(c, c.dimension, seed);
    const ObjectiveSpec spec = inst.spec(mu);
    const auto sizes = inst.task.train_sizes();
    const ModelStack local = ModelStack::from_blocks(inst.local_models);
    const auto local_eval = evaluate_accuracy(local, inst.task, c.noisy_test_labels);
    local_acc.push_back(local_eval.aggregate);
    local_obj.push_back(objective_value(spec, local));
    detail::add_agents(r, "local", seed, sizes, local_eval);

    const auto res = detail::run_from(inst, spec, detail::nonprivate_run_config(c, seed),
                                      c.noisy_test_labels, true);
    detail::add_rows(r, "non-private", seed, std::numeric_limits<double>::infinity(), res.metrics);
    const auto eval = evaluate_accuracy(res.final_models, inst.task, c.noisy_test_labels);
    np_acc.push_back(eval.aggregate);
    np_obj.push_back(res.metrics.back().objective);
    detail::add_agents(r, "non-private", seed, sizes, eval);
  }
  detail::add_summary(r, "local", std::numeric_limits<double>::infinity(), local_acc, local_obj);
  detail::add_summary(r, "non-private", std::numeric_limits<double>::infinity(), np_acc, np_obj);
  r.wall_seconds = clock.seconds();
  return r;
}

inline std::string private_series_name(double eps, WarmStart warm) {
  return "private eps=" + detail::fmt_short(eps) + " warm=" + detail::warm_start_name(warm);
}

// Private CD over the epsilon grid and warm starts, with local and
// non-private references on the same instances.
inline ExperimentReport exp_private_tradeoff(const ExperimentConfig& c) {
  detail::Stopwatch clock;
  ExperimentReport r;
  r.name = "synth-private";
  r.metric_name = "accuracy";
  detail::echo_common(r, c);
  const double mu = tune_mu(c);
  r.config.emplace_back("mu", detail::fmt_short(mu));
  r.config.emplace_back("mu_tuned", c.mu > 0.0 ? "false" : "true");
  r.config.emplace_back("T", std::to_string(c.resolved_ticks()));
  r.config.emplace_back("epsilon_bars", detail::join_doubles(c.epsilon_bars));
  r.config.emplace_back("delta_bar", detail::fmt(c.delta_bar));
  r.config.emplace_back("allocation", detail::allocation_name(c.allocation));
  r.config.emplace_back("warm_start_epsilon", detail::fmt_short(c.warm_start_epsilon));

  struct Cell {
    double eps;
    WarmStart warm;
    std::size_t updates;
    std::vector<double> acc, obj;
  };
  std::vector<Cell> cells;
  for (double eps : c.epsilon_bars) {
    for (WarmStart warm : c.private_warm_starts) {
      const std::size_t updates = tune_updates(c, mu, eps, warm);
      cells.push_back({eps, warm, updates, {}, {}});
      r.config.emplace_back("T_i[" + private_series_name(eps, warm) + "]",
                            std::to_string(updates));
    }
  }

  std::vector<double> local_acc, np_acc, local_obj, np_obj;
  for (std::uint64_t seed : c.seeds) {
    const SyntheticInstance inst = make_synthetic_instance(c, c.dimension, seed);
    const ObjectiveSpec spec = inst.spec(mu);
    const auto sizes = inst.task.train_sizes();
    const ModelStack local = ModelStack::from_blocks(inst.local_models);
    const auto local_eval = evaluate_accuracy(local, inst.task, c.noisy_test_labels);
    local_acc.push_back(local_eval.aggregate);
    local_obj.push_back(objective_value(spec, local));
    detail::add_agents(r, "local", seed, sizes, local_eval);

    const auto np = detail::run_from(inst, spec, detail::nonprivate_run_config(c, seed),
                                     c.noisy_test_labels, true);
    const auto np_eval = evaluate_accuracy(np.final_models, inst.task, c.noisy_test_labels);
    np_acc.push_back(np_eval.aggregate);
    np_obj.push_back(np.metrics.back().objective);
    detail::add_rows(r, "non-private", seed, std::numeric_limits<double>::infinity(), np.metrics);
    detail::add_agents(r, "non-private", seed, sizes, np_eval);

    for (auto& cell : cells) {
      const std::string name = private_series_name(cell.eps, cell.warm);
      const RunConfig rc = detail::private_run_config(c, seed, cell.eps, cell.updates, cell.warm);
      const auto res = run(spec, rc, inst.evaluator(c.noisy_test_labels));
      const auto eval = evaluate_accuracy(res.final_models, inst.task, c.noisy_test_labels);
      cell.acc.push_back(eval.aggregate);
      cell.obj.push_back(res.metrics.back().objective);
      detail::add_rows(r, name, seed, cell.eps, res.metrics);
      detail::add_agents(r, name, seed, sizes, eval);
    }
  }
  detail::add_summary(r, "local", std::numeric_limits<double>::infinity(), local_acc, local_obj);
  detail::add_summary(r, "non-private", std::numeric_limits<double>::infinity(), np_acc, np_obj);
  for (const auto& cell : cells) {
    detail::add_summary(r, private_series_name(cell.eps, cell.warm), cell.eps, cell.acc, cell.obj);
  }
  r.wall_seconds = clock.seconds();
  return r;
}

// Local models fit on locally perturbed data, across dimensions and epsilons.
inline ExperimentReport exp_local_dp_baseline(const ExperimentConfig& c) {
  detail::Stopwatch clock;
  ExperimentReport r;
  r.name = "local-dp";
  r.metric_name = "accuracy";
  detail::echo_common(r, c);
  r.config.emplace_back("local_dp_epsilons", detail::join_doubles(c.local_dp_epsilons));
  std::string dims;
  for (std::size_t k = 0; k < c.local_dp_dimensions.size(); ++k) {
    dims += (k ? ";" : "") + std::to_string(c.local_dp_dimensions[k]);
  }
  r.config.emplace_back("local_dp_dimensions", dims);

  for (std::size_t p : c.local_dp_dimensions) {
    std::vector<double> clean;
    std::map<double, std::vector<double>> perturbed;
    for (std::uint64_t seed : c.seeds) {
      const SyntheticInstance inst = make_synthetic_instance(c, p, seed);
      const auto sizes = inst.task.train_sizes();
      const auto e0 = evaluate_accuracy(ModelStack::from_blocks(inst.local_models), inst.task,
                                        c.noisy_test_labels);
      clean.push_back(e0.aggregate);
      detail::add_agents(r, "local p=" + std::to_string(p), seed, sizes, e0);
      const auto bounds = inst.task.feature_bounds();
      for (std::size_t e = 0; e < c.local_dp_epsilons.size(); ++e) {
        const double eps = c.local_dp_epsilons[e];
        Rng rng(derive_seed(derive_seed(seed, 400 + e), p));
        std::vector<Vector> models;
        for (const auto& d : inst.task.train) {
          const LocalDataset noisy = perturb_dataset_local_dp(d, eps, bounds, rng);
          models.push_back(fit_local_model(LogisticLoss(noisy)));
        }
        const auto ev = evaluate_accuracy(ModelStack::from_blocks(models), inst.task,
                                          c.noisy_test_labels);
        perturbed[eps].push_back(ev.aggregate);
        detail::add_agents(r, "local-dp p=" + std::to_string(p) + " eps=" + detail::fmt_short(eps),
                           seed, sizes, ev);
      }
    }
    detail::add_summary(r, "local p=" + std::to_string(p), std::numeric_limits<double>::infinity(),
                        clean, {});
    for (double eps : c.local_dp_epsilons) {
      detail::add_summary(r, "local-dp p=" + std::to_string(p) + " eps=" + detail::fmt_short(eps),
                          eps, perturbed[eps], {});
    }
  }
  r.wall_seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Recommendation
// ---------------------------------------------------------------------------

struct RecommendationInstance {
  RatingsTask task;
  std::vector<Vector> features;
  std::shared_ptr<const NetworkGraph> graph;
  std::vector<LossPtr> losses;
  std::vector<Vector> local_models;

  Evaluator evaluator() const {
    return [this](const ModelStack& m) { return evaluate_rmse(m, task, features).aggregate; };
  }
};

inline RecommendationInstance make_recommendation_instance(const ExperimentConfig& c,
                                                           std::uint64_t seed) {
  RecommendationInstance inst;
  inst.task = load_ratings_file(c.ratings_path, seed, c.min_ratings);
  detail::require(inst.task.users() >= 2, "need at least two users");
  // Fallback features depend only on the validation seed so that every
  // run sees the same item representation.
  Rng frng(derive_seed(c.validation_seed, 500));
  inst.features = load_or_make_features(c.features_path, inst.task.items, c.feature_dimension, frng);
  const auto data = make_rating_datasets(inst.task, inst.features);
  NetworkGraph g = build_knn_cosine_graph(rating_rows(inst.task), c.knn);
  g = set_confidences(g, inst.task.train_sizes());
  inst.graph = std::make_shared<const NetworkGraph>(std::move(g));
  inst.losses = make_quadratic_losses(data, c.clip);
  for (const auto& l : inst.losses) inst.local_models.push_back(fit_local_model(*l));
  return inst;
}

inline std::string recsys_private_name(double eps) {
  return "private eps=" + detail::fmt_short(eps);
}

// Local baseline, non-private CD and private CD on per-user rating models.
inline ExperimentReport exp_recommendation(const ExperimentConfig& c) {
  detail::Stopwatch clock;
  ExperimentReport r;
  r.name = "recsys";
  r.metric_name = "rmse";
  r.config.emplace_back("ratings", c.ratings_path);
  r.config.emplace_back("features", c.features_path.empty() ? "fallback" : c.features_path);
  r.config.emplace_back("feature_dimension", std::to_string(c.feature_dimension));
  r.config.emplace_back("knn", std::to_string(c.knn));
  r.config.emplace_back("mu", detail::fmt_short(c.recsys_mu));
  r.config.emplace_back("clip", detail::fmt_short(c.clip));
  r.config.emplace_back("epsilon_bars", detail::join_doubles(c.recsys_epsilons));
  r.config.emplace_back("delta_bar", detail::fmt(c.delta_bar));
  r.config.emplace_back("T_i", std::to_string(c.recsys_updates_per_agent));
  std::string seeds;
  for (std::size_t k = 0; k < c.seeds.size(); ++k) {
    seeds += (k ? ";" : "") + std::to_string(c.seeds[k]);
  }
  r.config.emplace_back("seeds", seeds);
  r.seeds = c.seeds;

  std::vector<double> local_rmse, np_rmse, local_obj, np_obj;
  std::map<double, std::vector<double>> priv_rmse, priv_obj;
  std::size_t users = 0;
  for (std::uint64_t seed : c.seeds) {
    const RecommendationInstance inst = make_recommendation_instance(c, seed);
    users = inst.task.users();
    const ObjectiveSpec spec(inst.graph, inst.losses, c.recsys_mu);
    const auto sizes = inst.task.train_sizes();
    const ModelStack local = ModelStack::from_blocks(inst.local_models);
    const auto le = evaluate_rmse(local, inst.task, inst.features);
    local_rmse.push_back(le.aggregate);
    local_obj.push_back(objective_value(spec, local));
    detail::add_agents(r, "local", seed, sizes, le);

    RunConfig rc;
    rc.mode = RunMode::kNonPrivate;
    rc.seed = seed;
    rc.total_ticks = c.total_ticks.value_or(100 * spec.agents());
    rc.metrics_stride = c.metrics_stride > 0 ? c.metrics_stride : 10 * spec.agents();
    Rng schedule_rng(derive_seed(seed, 1));
    const auto np = run_schedule(spec, rc, local, plan_schedule(spec, rc, schedule_rng),
                                 inst.evaluator());
    const auto ne = evaluate_rmse(np.final_models, inst.task, inst.features);
    np_rmse.push_back(ne.aggregate);
    np_obj.push_back(np.metrics.back().objective);
    detail::add_rows(r, "non-private", seed, std::numeric_limits<double>::infinity(), np.metrics);
    detail::add_agents(r, "non-private", seed, sizes, ne);

    for (double eps : c.recsys_epsilons) {
      RunConfig pc;
      pc.mode = c.private_mode;
      pc.seed = seed;
      pc.epsilon_bar = eps;
      pc.delta_bar = c.delta_bar;
      pc.updates_per_agent = c.recsys_updates_per_agent;
      pc.stopping = StoppingRule::kBudgetExhausted;
      pc.warm_start = WarmStart::kZeros;
      pc.metrics_stride = rc.metrics_stride;
      const auto res = run(spec, pc, inst.evaluator());
      const auto pe = evaluate_rmse(res.final_models, inst.task, inst.features);
      priv_rmse[eps].push_back(pe.aggregate);
      priv_obj[eps].push_back(res.metrics.back().objective);
      detail::add_rows(r, recsys_private_name(eps), seed, eps, res.metrics);
      detail::add_agents(r, recsys_private_name(eps), seed, sizes, pe);
    }
  }
  r.notes.emplace_back("users", std::to_string(users));
  detail::add_summary(r, "local", std::numeric_limits<double>::infinity(), local_rmse, local_obj);
  detail::add_summary(r, "non-private", std::numeric_limits<double>::infinity(), np_rmse, np_obj);
  for (double eps : c.recsys_epsilons) {
    detail::add_summary(r, recsys_private_name(eps), eps, priv_rmse[eps], priv_obj[eps]);
  }
  r.wall_seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

// series,seed,epsilon_bar,tick,objective,mean_test_metric,transmissions_cumulative,budget_spent_max
inline void write_report_csv(std::ostream& os, const ExperimentReport& r) {
  os << "series,seed,epsilon_bar,tick,objective,mean_test_metric,transmissions_cumulative,"
        "budget_spent_max\n";
  for (const auto& row : r.rows) {
    const auto& m = row.metrics;
    os << row.series << ',' << row.seed << ',' << detail::fmt(row.epsilon_bar) << ',' << m.tick
       << ',' << detail::fmt(m.objective) << ',' << detail::fmt(m.mean_test_metric) << ','
       << m.transmissions << ',' << detail::fmt(m.budget_spent_max) << '\n';
  }
}

// series,seed,agent,train_size,metric
inline void write_agents_csv(std::ostream& os, const ExperimentReport& r) {
  os << "series,seed,agent,train_size,metric\n";
  for (const auto& a : r.agents) {
    os << a.series << ',' << a.seed << ',' << a.agent << ',' << a.train_size << ','
       << detail::fmt(a.metric) << '\n';
  }
}

// Flat key=value text. Wall time is optional so that the file can be
// compared across runs.
inline void write_summary(std::ostream& os, const ExperimentReport& r, bool include_wall_time) {
  os << "experiment=" << r.name << '\n';
  os << "metric=" << r.metric_name << '\n';
  for (const auto& [k, v] : r.config) os << "config." << k << '=' << v << '\n';
  for (const auto& [k, v] : r.notes) os << "note." << k << '=' << v << '\n';
  for (const auto& s : r.summary) {
    os << "result." << s.series << ".mean_" << r.metric_name << '=' << detail::fmt(s.mean_metric)
       << '\n';
    os << "result." << s.series << ".sd_" << r.metric_name << '=' << detail::fmt(s.sd_metric)
       << '\n';
    if (!std::isnan(s.mean_objective)) {
      os << "result." << s.series << ".mean_objective=" << detail::fmt(s.mean_objective) << '\n';
    }
    os << "result." << s.series << ".runs=" << s.runs << '\n';
  }
  if (include_wall_time) os << "wall_seconds=" << detail::fmt_short(r.wall_seconds) << '\n';
}

// Mean per-agent gain (series minus baseline) for agents in the bottom and
// top quartile of training-set size, pooled over seeds.
struct QuartileGain {
  double bottom = 0.0;
  double top = 0.0;
  std::size_t bottom_count = 0;
  std::size_t top_count = 0;
};

inline QuartileGain quartile_gain(const ExperimentReport& r, const std::string& series,
                                  const std::string& baseline) {
  std::map<std::pair<std::uint64_t, std::size_t>, std::pair<std::size_t, double>> base;
  for (const auto& a : r.agents) {
    if (a.series == baseline) base[{a.seed, a.agent}] = {a.train_size, a.metric};
  }
  std::vector<std::pair<std::size_t, double>> gains;  // (size, gain)
  for (const auto& a : r.agents) {
    if (a.series != series) continue;
    auto it = base.find({a.seed, a.agent});
    if (it == base.end() || std::isnan(a.metric) || std::isnan(it->second.second)) continue;
    gains.emplace_back(a.train_size, a.metric - it->second.second);
  }
  detail::require(gains.size() >= 4, "need at least four agents for quartiles");
  std::vector<std::size_t> sizes;
  for (const auto& g : gains) sizes.push_back(g.first);
  std::sort(sizes.begin(), sizes.end());
  const std::size_t q1 = sizes[(sizes.size() - 1) / 4];
  const std::size_t q3 = sizes[3 * (sizes.size() - 1) / 4];
  QuartileGain out;
  for (const auto& [m, g] : gains) {
    if (m <= q1) {
      out.bottom += g;
      ++out.bottom_count;
    }
    if (m >= q3) {
      out.top += g;
      ++out.top_count;
    }
  }
  out.bottom /= static_cast<double>(out.bottom_count);
  out.top /= static_cast<double>(out.top_count);
  return out;
}

// ---------------------------------------------------------------------------
// Bounds check
// ---------------------------------------------------------------------------

struct BoundsCheckRow {
  std::size_t tick = 0;
  double mean_gap = 0.0;
  double standard_error = 0.0;
  double nonprivate_bound = 0.0;
  double utility_printed = 0.0;
  double utility_derivation = 0.0;
  double closed_form_noise = 0.0;
};

struct BoundsCheckConfig {
  std::size_t agents = 10;
  std::size_t dimension = 3;
  double mu = 0.5;
  std::size_t runs = 2000;
  std::vector<std::size_t> checkpoints = {10, 50, 100, 500};
  bool private_run = false;
  double epsilon_bar = 1.0;
  std::size_t updates_per_agent = 10;
  std::uint64_t seed = 7;
};

// Strongly convex model-propagation instance with a connected random graph.
inline ObjectiveSpec make_bounds_instance(std::size_t n, std::size_t p, double mu,
                                          std::uint64_t seed, std::size_t sample_count = 10) {
  Rng rng(derive_seed(seed, 600));
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double v = 0.2 + uniform01(rng);
    w[i * n + i + 1] = w[(i + 1) * n + i] = v;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (uniform01(rng) < 0.3) w[i * n + j] = w[j * n + i] = uniform01(rng);
    }
  }
  std::vector<double> conf(n);
  for (auto& c : conf) c = 0.2 + 0.8 * uniform01(rng);
  auto g = std::make_shared<const NetworkGraph>(n, std::move(w), std::move(conf));
  std::vector<LossPtr> losses;
  for (std::size_t i = 0; i < n; ++i) {
    Vector a(p);
    for (auto& v : a) v = 2.0 * standard_normal(rng);
    losses.push_back(std::make_shared<ModelPropagationLoss>(std::move(a), sample_count));
  }
  return ObjectiveSpec(g, std::move(losses), mu);
}

// Monte-Carlo mean suboptimality gap against the utility bounds. Private
// runs use uniform per-agent Laplace scales s_i = 2 L0 / (eps m_i) with L0
// taken as 1 for this synthetic quadratic instance.
inline std::vector<BoundsCheckRow> run_bounds_check(const BoundsCheckConfig& c) {
  const ObjectiveSpec spec = make_bounds_instance(c.agents, c.dimension, c.mu, c.seed);
  const ModelStack opt = solve_model_propagation_exact(spec);
  const double q_star = objective_value(spec, opt);
  const ModelStack start(c.agents, c.dimension, 0.0);
  const double gap0 = objective_value(spec, start) - q_star;
  const std::size_t horizon = *std::max_element(c.checkpoints.begin(), c.checkpoints.end());

  std::vector<double> scales(c.agents, 0.0);
  if (c.private_run) {
    const double per = c.epsilon_bar / static_cast<double>(c.updates_per_agent);
    for (std::size_t i = 0; i < c.agents; ++i) {
      scales[i] = noise_scale_laplace(1.0, per, spec.loss(i).sample_count());
    }
  }
  std::vector<double> sum(c.checkpoints.size(), 0.0), sum_sq(c.checkpoints.size(), 0.0);
  for (std::size_t run = 0; run < c.runs; ++run) {
    Rng rng(derive_seed(c.seed, 1000 + run));
    ModelStack theta = start;
    for (std::size_t t = 1; t <= horizon; ++t) {
      const std::size_t i = uniform_index(rng, c.agents);
      if (c.private_run) {
        theta.set_block(i, private_block_update(spec, theta, i, sample_noise(scales[i], c.dimension, rng)));
      } else {
        theta.set_block(i, cd_block_update(spec, theta, i));
      }
      for (std::size_t k = 0; k < c.checkpoints.size(); ++k) {
        if (c.checkpoints[k] == t) {
          const double gap = objective_value(spec, theta) - q_star;
          sum[k] += gap;
          sum_sq[k] += gap * gap;
        }
      }
    }
  }
  std::vector<BoundsCheckRow> rows;
  const double runs = static_cast<double>(c.runs);
  for (std::size_t k = 0; k < c.checkpoints.size(); ++k) {
    BoundsCheckRow row;
    row.tick = c.checkpoints[k];
    row.mean_gap = sum[k] / runs;
    const double var = std::max(0.0, (sum_sq[k] - runs * row.mean_gap * row.mean_gap) / (runs - 1.0));
    row.standard_error = std::sqrt(var / runs);
    row.nonprivate_bound = convergence_bound(spec, gap0, row.tick);
    const auto b = utility_bound(spec, gap0, row.tick, scales);
    row.utility_printed = b.printed();
    row.utility_derivation = b.derivation();
    row.closed_form_noise = uniform_noise_term_closed_form(spec, row.tick, scales);
    rows.push_back(row);
  }
  return rows;
}

inline void write_bounds_csv(std::ostream& os, const std::vector<BoundsCheckRow>& rows) {
  os << "tick,mean_gap,standard_error,convergence_bound,utility_printed,utility_derivation,"
        "closed_form_noise\n";
  for (const auto& r : rows) {
    os << r.tick << ',' << detail::fmt(r.mean_gap) << ',' << detail::fmt(r.standard_error) << ','
       << detail::fmt(r.nonprivate_bound) << ',' << detail::fmt(r.utility_printed) << ','
       << detail::fmt(r.utility_derivation) << ',' << detail::fmt(r.closed_form_noise) << '\n';
  }
}

}  // namespace dpcd
