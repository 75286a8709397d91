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
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"
#include "dpcd/objective.hpp"
#include "dpcd/privacy.hpp"

namespace dpcd {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

// Realized wake-up sequence: wakeups[t] is the agent whose clock ticks at
// global tick t. i.i.d. rate-1 Poisson clocks make this uniform per tick.
struct Schedule {
  std::size_t agents = 0;
  std::vector<std::size_t> wakeups;

  std::size_t ticks() const { return wakeups.size(); }

  std::vector<std::size_t> ticks_of(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < wakeups.size(); ++t) {
      if (wakeups[t] == i) out.push_back(t);
    }
    return out;
  }

  std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c(agents, 0);
    for (auto i : wakeups) ++c[i];
    return c;
  }
};

inline Schedule draw_schedule(std::size_t n, std::size_t ticks, Rng& rng) {
  detail::require(n >= 1, "need at least one agent");
  Schedule s{n, {}};
  s.wakeups.resize(ticks);
  for (auto& w : s.wakeups) w = uniform_index(rng, n);
  return s;
}

// Draws ticks until every agent listed in `quota` has woken up that many
// times (or `max_ticks` is reached).
inline Schedule draw_schedule_until_quota(const std::vector<std::size_t>& quota, Rng& rng,
                                          std::size_t max_ticks) {
  const std::size_t n = quota.size();
  detail::require(n >= 1, "need at least one agent");
  Schedule s{n, {}};
  std::vector<std::size_t> seen(n, 0);
  std::size_t unmet = 0;
  for (std::size_t i = 0; i < n; ++i) unmet += quota[i] > 0 ? 1 : 0;
  while (unmet > 0 && s.wakeups.size() < max_ticks) {
    const std::size_t i = uniform_index(rng, n);
    s.wakeups.push_back(i);
    if (++seen[i] == quota[i]) --unmet;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Coordinate-descent updates
// ---------------------------------------------------------------------------

// Theta_i - (1/L_i) [grad Q(Theta)]_i
inline Vector cd_block_update(const ObjectiveSpec& spec, const ModelStack& theta,
                              std::size_t i) {
  const double li = spec.block_lipschitz(i);
  if (!(li > 0.0)) {
    throw std::domain_error(detail::concat("agent ", i, " is isolated (L_i = 0)"));
  }
  Vector g = partial_gradient(spec, theta, i);
  Vector out = theta.block_copy(i);
  axpy(-1.0 / li, g, out);
  return out;
}

// (1 - a) Theta_i + a (sum_j W_ij/D_ii Theta_j - mu c_i grad L_i(Theta_i)),
// a = 1/(1 + mu c_i L_i^loc). Algebraically identical to cd_block_update.
inline Vector cd_block_update_mixing(const ObjectiveSpec& spec, const ModelStack& theta,
                                     std::size_t i) {
  const auto& g = spec.graph();
  const double d = g.degree(i);
  if (!(d > 0.0)) {
    throw std::domain_error(detail::concat("agent ", i, " is isolated (D_ii = 0)"));
  }
  const double a = spec.alpha(i);
  const double mc = spec.mu() * g.confidence(i);
  auto ti = theta.block(i);
  Vector avg(spec.dimension(), 0.0);
  for (const auto& nb : g.neighbors(i)) axpy(nb.weight / d, theta.block(nb.index), avg);
  Vector grad = spec.loss(i).gradient(ti);
  Vector out(spec.dimension());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = (1.0 - a) * ti[k] + a * (avg[k] - mc * grad[k]);
  }
  return out;
}

// Noisy update: the local gradient is replaced by grad L_i + noise, so the
// block moves by -(1/L_i)([grad Q]_i + mu D_ii c_i noise).
inline Vector private_block_update(const ObjectiveSpec& spec, const ModelStack& theta,
                                   std::size_t i, std::span<const double> noise) {
  detail::require(noise.size() == spec.dimension(), "noise dimension mismatch");
  Vector out = cd_block_update(spec, theta, i);
  const auto& g = spec.graph();
  const double factor = spec.mu() * g.degree(i) * g.confidence(i) / spec.block_lipschitz(i);
  axpy(-factor, noise, out);
  return out;
}

inline ModelStack cd_step(const ObjectiveSpec& spec, const ModelStack& theta, std::size_t i) {
  ModelStack out = theta;
  out.set_block(i, cd_block_update(spec, theta, i));
  return out;
}

enum class StepOutcome { kUpdated, kSkipped };

// Noise scale for the next planned update of agent i, or nullopt when the
// ledger is exhausted.
inline std::optional<double> planned_noise_scale(const ObjectiveSpec& spec, std::size_t i,
                                                 const PrivacyLedger& ledger) {
  auto next = ledger.next_allocation();
  if (!next) return std::nullopt;
  const auto& c = spec.local_constants(i);
  const std::size_t m = spec.loss(i).sample_count();
  if (ledger.mechanism() == NoiseMechanism::kLaplace) {
    return noise_scale_laplace(c.point_lipschitz_l1, next->first, m);
  }
  const double l2 = c.point_lipschitz_l2.value_or(c.point_lipschitz_l1);
  return noise_scale_gaussian(l2, next->first, next->second, m);
}

// Applies one private update to agent i in place. Exhausted agents stay
// silent and the call reports kSkipped.
inline StepOutcome private_cd_step(const ObjectiveSpec& spec, ModelStack& theta, std::size_t i,
                                   PrivacyLedger& ledger, Rng& rng, std::size_t tick = 0) {
  const auto scale = planned_noise_scale(spec, i, ledger);
  if (!scale) return StepOutcome::kSkipped;
  const Vector noise = sample_noise(*scale, spec.dimension(), rng, ledger.mechanism());
  theta.set_block(i, private_block_update(spec, theta, i, noise));
  ledger.record(tick, *scale);
  return StepOutcome::kUpdated;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

enum class RunMode { kNonPrivate, kPrivateLaplace, kPrivateGaussian };
enum class WarmStart { kZeros, kConstant, kLocalModels, kPrivatePropagation };
enum class Allocation { kUniform, kOptimal };
enum class StoppingRule { kTickCount, kBudgetExhausted };

struct RunConfig {
  RunMode mode = RunMode::kNonPrivate;
  std::size_t total_ticks = 0;          // T (tick-count rule, optimal allocation)
  std::size_t updates_per_agent = 0;    // T_i for private runs
  std::uint64_t seed = 0;
  WarmStart warm_start = WarmStart::kZeros;
  double warm_start_constant = 0.0;
  double warm_start_epsilon = 0.05;     // eps for the private propagation warm start
  Allocation allocation = Allocation::kUniform;
  StoppingRule stopping = StoppingRule::kTickCount;
  double epsilon_bar = 1.0;
  double delta_bar = 0.0;
  double gaussian_step_delta = 0.0;     // per-update delta; 0 picks delta_bar / T_i
  std::size_t metrics_stride = 0;       // 0 picks n
  bool keep_trajectory = false;

  bool is_private() const { return mode != RunMode::kNonPrivate; }

  void validate() const {
    if (is_private()) {
      detail::require(epsilon_bar > 0.0, "private runs need a positive budget");
      detail::require(delta_bar >= 0.0 && delta_bar <= 1.0, "delta_bar must be in [0,1]");
      if (allocation == Allocation::kUniform) {
        detail::require(updates_per_agent >= 1, "private runs need updates_per_agent >= 1");
      } else {
        detail::require(total_ticks >= 1, "optimal allocation needs total_ticks >= 1");
        detail::require(stopping == StoppingRule::kTickCount,
                        "optimal allocation needs a pre-drawn tick-count schedule");
      }
      if (mode == RunMode::kPrivateGaussian) {
        detail::require(delta_bar > 0.0 || gaussian_step_delta > 0.0,
                        "Gaussian mode needs a positive delta");
      }
    }
    if (stopping == StoppingRule::kBudgetExhausted) {
      detail::require(is_private(), "budget-exhausted stopping needs a private mode");
    }
  }
};

namespace detail {

template <typename E>
E parse_enum(const std::string& v, const std::map<std::string, E>& table,
             const std::string& key) {
  auto it = table.find(v);
  if (it == table.end()) throw std::invalid_argument("bad value '" + v + "' for " + key);
  return it->second;
}

inline const std::map<std::string, RunMode>& run_mode_names() {
  static const std::map<std::string, RunMode> m{{"non-private", RunMode::kNonPrivate},
                                                {"private-laplace", RunMode::kPrivateLaplace},
                                                {"private-gaussian", RunMode::kPrivateGaussian}};
  return m;
}
inline const std::map<std::string, WarmStart>& warm_start_names() {
  static const std::map<std::string, WarmStart> m{
      {"zeros", WarmStart::kZeros},
      {"constant", WarmStart::kConstant},
      {"local-models", WarmStart::kLocalModels},
      {"private-propagation", WarmStart::kPrivatePropagation}};
  return m;
}
inline const std::map<std::string, Allocation>& allocation_names() {
  static const std::map<std::string, Allocation> m{{"uniform", Allocation::kUniform},
                                                   {"optimal", Allocation::kOptimal}};
  return m;
}
inline const std::map<std::string, StoppingRule>& stopping_names() {
  static const std::map<std::string, StoppingRule> m{
      {"tick-count", StoppingRule::kTickCount},
      {"budget-exhausted", StoppingRule::kBudgetExhausted}};
  return m;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline WarmStart parse_warm_start(const std::string& v) {
  return detail::parse_enum(v, detail::warm_start_names(), "warm-start");
}
inline Allocation parse_allocation(const std::string& v) {
  return detail::parse_enum(v, detail::allocation_names(), "allocation");
}
inline RunMode parse_run_mode(const std::string& v) {
  return detail::parse_enum(v, detail::run_mode_names(), "mode");
}

// Applies one "key=value" setting to `cfg`.
inline void apply_config_setting(RunConfig& cfg, const std::string& key,
                                 const std::string& value) {
  auto to_size = [&](const std::string& v) {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("bad integer for " + key);
    return static_cast<std::size_t>(x);
  };
  auto to_double = [&](const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("bad number for " + key);
    return x;
  };
  if (key == "mode") {
    cfg.mode = parse_run_mode(value);
  } else if (key == "T" || key == "total_ticks") {
    cfg.total_ticks = to_size(value);
  } else if (key == "T_i" || key == "updates_per_agent") {
    cfg.updates_per_agent = to_size(value);
  } else if (key == "seed") {
    cfg.seed = to_size(value);
  } else if (key == "warm_start") {
    cfg.warm_start = parse_warm_start(value);
  } else if (key == "warm_start_constant") {
    cfg.warm_start_constant = to_double(value);
  } else if (key == "warm_start_epsilon") {
    cfg.warm_start_epsilon = to_double(value);
  } else if (key == "allocation") {
    cfg.allocation = parse_allocation(value);
  } else if (key == "stopping") {
    cfg.stopping = detail::parse_enum(value, detail::stopping_names(), key);
  } else if (key == "epsilon_bar") {
    cfg.epsilon_bar = to_double(value);
  } else if (key == "delta_bar") {
    cfg.delta_bar = to_double(value);
  } else if (key == "gaussian_step_delta") {
    cfg.gaussian_step_delta = to_double(value);
  } else if (key == "metrics_stride") {
    cfg.metrics_stride = to_size(value);
  } else if (key == "keep_trajectory") {
    cfg.keep_trajectory = value == "1" || value == "true";
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

// Flat key=value file; '#' starts a comment.
inline RunConfig parse_run_config(std::istream& is, RunConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
    try {
      apply_config_setting(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Warm starts
// ---------------------------------------------------------------------------

inline std::vector<Vector> fit_local_models(const ObjectiveSpec& spec,
                                            double tol = kDefaultFitTolerance) {
  std::vector<Vector> out;
  out.reserve(spec.agents());
  for (std::size_t i = 0; i < spec.agents(); ++i) out.push_back(fit_local_model(spec.loss(i), tol));
  return out;
}

// Runs non-private model-propagation CD over `anchors` until the full
// gradient norm drops below `tol`, with randomized agent order from `rng`.
inline ModelStack propagate_models(const ObjectiveSpec& mp_spec, ModelStack theta, Rng& rng,
                                   double tol = 1e-9, std::size_t max_sweeps = 100000) {
  const std::size_t n = mp_spec.agents();
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    if (full_gradient_norm(mp_spec, theta) <= tol * (1.0 + norm2(theta.flat()))) return theta;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = uniform_index(rng, n);
      if (mp_spec.block_lipschitz(i) > 0.0) theta.set_block(i, cd_block_update(mp_spec, theta, i));
    }
  }
  const double final_norm = full_gradient_norm(mp_spec, theta);
  throw ConvergenceError(
      detail::concat("model propagation did not converge, gradient norm ", final_norm),
      final_norm);
}

// L1 sensitivity of the regularized local minimizer: a single-point change
// moves the gradient by at most 2 L0*/m in L2, strong convexity sigma turns
// that into ||delta theta||_2 <= 2 L0*/(m sigma), and ||.||_1 <= sqrt(p) ||.||_2.
inline double local_model_l1_sensitivity(const LossModel& loss) {
  const auto c = loss.constants();
  const std::size_t m = loss.sample_count();
  detail::require(m >= 1, "sensitivity needs at least one data point");
  detail::require(c.strong_convexity > 0.0,
                  "output perturbation needs a strongly convex local loss");
  const double l2 = c.point_lipschitz_l2.value_or(c.point_lipschitz_l1);
  return std::sqrt(static_cast<double>(loss.dimension())) * 2.0 * l2 /
         (static_cast<double>(m) * c.strong_convexity);
}

// Private warm start: each agent perturbs its local minimizer once with
// Laplace output perturbation at `eps_ws`, then the perturbed anchors are
// smoothed by non-private model propagation (no further privacy cost).
// Agents without data contribute a zero anchor.
inline ModelStack warm_start_private_propagation(const ObjectiveSpec& spec, double eps_ws,
                                                 Rng& rng,
                                                 std::vector<PrivacyLedger>* ledgers = nullptr) {
  detail::require(eps_ws > 0.0, "warm-start epsilon must be positive");
  const std::size_t n = spec.agents();
  const std::size_t p = spec.dimension();
  std::vector<Vector> anchors(n, Vector(p, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& loss = spec.loss(i);
    if (loss.sample_count() == 0) continue;
    anchors[i] = fit_local_model(loss);
    if (std::isinf(eps_ws)) continue;
    const double scale = local_model_l1_sensitivity(loss) / eps_ws;
    axpy(1.0, sample_noise(scale, p, rng), anchors[i]);
    if (ledgers != nullptr) (*ledgers)[i].charge_warm_start(eps_ws);
  }
  const ObjectiveSpec mp = make_model_propagation_spec(spec.graph_ptr(), anchors, spec.mu());
  return propagate_models(mp, ModelStack::from_blocks(anchors), rng);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::size_t tick = 0;
  double objective = 0.0;
  double mean_test_metric = std::numeric_limits<double>::quiet_NaN();
  std::size_t transmissions = 0;
  double budget_spent_max = 0.0;
};

struct RunResult {
  ModelStack final_models;
  ModelStack warm_start;
  std::vector<ModelStack> trajectory;
  std::vector<MetricsRow> metrics;
  Schedule schedule;
  std::vector<PrivacyLedger> ledgers;
  std::vector<std::size_t> updates;     // performed updates per agent
  std::size_t transmissions = 0;
  std::size_t silent_wakeups = 0;       // exhausted or isolated agents waking up
  std::vector<std::size_t> isolated;
};

using Evaluator = std::function<double(const ModelStack&)>;

// Metrics CSV: tick,objective,mean_test_metric,transmissions_cumulative,budget_spent_max
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "tick,objective,mean_test_metric,transmissions_cumulative,budget_spent_max\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    os << r.tick << ',' << r.objective << ',';
    if (!std::isnan(r.mean_test_metric)) os << r.mean_test_metric;
    os << ',' << r.transmissions << ',' << r.budget_spent_max << '\n';
  }
}

namespace detail {

inline std::vector<PrivacyLedger> make_ledgers(const ObjectiveSpec& spec, const RunConfig& cfg,
                                               const Schedule& schedule) {
  std::vector<PrivacyLedger> ledgers;
  const std::size_t n = spec.agents();
  ledgers.reserve(n);
  const NoiseMechanism mech = cfg.mode == RunMode::kPrivateGaussian ? NoiseMechanism::kGaussian
                                                                    : NoiseMechanism::kLaplace;
  std::vector<double> uniform_plan;
  if (cfg.allocation == Allocation::kUniform) {
    uniform_plan = allocate_uniform(cfg.epsilon_bar, cfg.updates_per_agent, cfg.delta_bar);
  }
  const double contraction = 1.0 - spec.sigma_bound() / (static_cast<double>(n) * spec.l_max());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> plan;
    if (spec.loss(i).sample_count() > 0 && spec.block_lipschitz(i) > 0.0) {
      if (cfg.allocation == Allocation::kUniform) {
        plan = uniform_plan;
      } else {
        const auto ticks = schedule.ticks_of(i);
        if (!ticks.empty()) {
          const auto by_tick = allocate_optimal(cfg.epsilon_bar, schedule.ticks(), contraction,
                                                ticks);
          for (auto t : ticks) plan.push_back(by_tick[t]);
        }
      }
    }
    std::vector<double> deltas;
    if (mech == NoiseMechanism::kGaussian) {
      const double d = cfg.gaussian_step_delta > 0.0
                           ? cfg.gaussian_step_delta
                           : cfg.delta_bar / static_cast<double>(std::max<std::size_t>(1, plan.size()));
      deltas.assign(plan.size(), d);
    }
    ledgers.emplace_back(cfg.epsilon_bar, cfg.delta_bar, std::move(plan), mech, std::move(deltas));
  }
  return ledgers;
}

}  // namespace detail

inline Schedule plan_schedule(const ObjectiveSpec& spec, const RunConfig& cfg, Rng& rng) {
  if (cfg.stopping == StoppingRule::kBudgetExhausted) {
    std::vector<std::size_t> quota(spec.agents(), cfg.updates_per_agent);
    for (std::size_t i = 0; i < spec.agents(); ++i) {
      if (spec.block_lipschitz(i) == 0.0 || spec.loss(i).sample_count() == 0) quota[i] = 0;
    }
    const std::size_t cap = cfg.total_ticks > 0
                                ? cfg.total_ticks
                                : 1000 * spec.agents() * std::max<std::size_t>(1, cfg.updates_per_agent);
    return draw_schedule_until_quota(quota, rng, cap);
  }
  return draw_schedule(spec.agents(), cfg.total_ticks, rng);
}

inline ModelStack make_warm_start(const ObjectiveSpec& spec, const RunConfig& cfg, Rng& rng,
                                  std::vector<PrivacyLedger>* ledgers = nullptr) {
  const std::size_t n = spec.agents();
  const std::size_t p = spec.dimension();
  switch (cfg.warm_start) {
    case WarmStart::kZeros:
      return ModelStack(n, p, 0.0);
    case WarmStart::kConstant:
      return ModelStack(n, p, cfg.warm_start_constant);
    case WarmStart::kLocalModels:
      return ModelStack::from_blocks(fit_local_models(spec));
    case WarmStart::kPrivatePropagation:
      return warm_start_private_propagation(spec, cfg.warm_start_epsilon, rng, ledgers);
  }
  return ModelStack(n, p, 0.0);
}

// Simulates the asynchronous broadcast algorithm over a given schedule.
// Broadcasts are instantaneous: neighbors always read the latest block.
inline RunResult run_schedule(const ObjectiveSpec& spec, const RunConfig& cfg, ModelStack start,
                              Schedule schedule, const Evaluator& evaluate = {}) {
  cfg.validate();
  spec.check_models(start);
  const std::size_t n = spec.agents();
  RunResult res;
  res.warm_start = start;
  res.schedule = std::move(schedule);
  res.updates.assign(n, 0);
  res.isolated = spec.isolated_agents();
  if (cfg.is_private()) res.ledgers = detail::make_ledgers(spec, cfg, res.schedule);
  Rng noise_rng(derive_seed(cfg.seed, 2));
  ModelStack theta = std::move(start);
  const std::size_t stride = cfg.metrics_stride > 0 ? cfg.metrics_stride : n;

  auto budget_max = [&] {
    double m = 0.0;
    for (const auto& l : res.ledgers) m = std::max(m, l.composed_spent());
    return m;
  };
  auto record = [&](std::size_t tick) {
    MetricsRow row;
    row.tick = tick;
    row.objective = objective_value(spec, theta);
    if (evaluate) row.mean_test_metric = evaluate(theta);
    row.transmissions = res.transmissions;
    row.budget_spent_max = budget_max();
    res.metrics.push_back(row);
    if (cfg.keep_trajectory) res.trajectory.push_back(theta);
  };

  record(0);
  const std::size_t total = res.schedule.ticks();
  for (std::size_t t = 0; t < total; ++t) {
    const std::size_t i = res.schedule.wakeups[t];
    bool updated = false;
    if (spec.block_lipschitz(i) > 0.0) {
      if (cfg.is_private()) {
        updated = private_cd_step(spec, theta, i, res.ledgers[i], noise_rng, t) ==
                  StepOutcome::kUpdated;
      } else {
        theta.set_block(i, cd_block_update(spec, theta, i));
        updated = true;
      }
    }
    if (updated) {
      ++res.updates[i];
      res.transmissions += spec.graph().neighbors(i).size();
    } else {
      ++res.silent_wakeups;
    }
    if ((t + 1) % stride == 0 || t + 1 == total) record(t + 1);
  }
  res.final_models = std::move(theta);
  return res;
}

// Full run: draws the schedule, builds the warm start and simulates.
inline RunResult run(const ObjectiveSpec& spec, const RunConfig& cfg,
                     const Evaluator& evaluate = {}) {
  cfg.validate();
  Rng schedule_rng(derive_seed(cfg.seed, 1));
  Rng warm_rng(derive_seed(cfg.seed, 3));
  Schedule schedule = plan_schedule(spec, cfg, schedule_rng);
  ModelStack start = make_warm_start(spec, cfg, warm_rng);
  RunResult res = run_schedule(spec, cfg, std::move(start), std::move(schedule), evaluate);
  if (cfg.is_private() && cfg.warm_start == WarmStart::kPrivatePropagation) {
    for (std::size_t i = 0; i < spec.agents(); ++i) {
      if (spec.loss(i).sample_count() > 0) res.ledgers[i].charge_warm_start(cfg.warm_start_epsilon);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Theoretical bounds
// ---------------------------------------------------------------------------

// 1 - sigma / (n L_max): per-tick contraction of the expected gap.
inline double contraction_factor(const ObjectiveSpec& spec) {
  return 1.0 - spec.sigma_bound() / (static_cast<double>(spec.agents()) * spec.l_max());
}

// E[Q(Theta(T)) - Q*] <= (1 - sigma/(n L_max))^T (Q(Theta(0)) - Q*).
inline double convergence_bound(const ObjectiveSpec& spec, double initial_gap, std::size_t ticks) {
  if (!(spec.sigma_bound() > 0.0)) throw std::domain_error("objective is not strongly convex");
  return std::pow(contraction_factor(spec), static_cast<double>(ticks)) * initial_gap;
}

struct UtilityBound {
  double optimization = 0.0;        // (1 - rho)^T gap0
  double noise_printed = 0.0;       // (1/(n L_min)) sum_t sum_i (1-rho)^t (mu D c s)^2
  double noise_derivation = 0.0;    // (1/(2 n L_min)) sum_t (1-rho)^t E||scaled noise(t)||^2

  double printed() const { return optimization + noise_printed; }
  double derivation() const { return optimization + noise_derivation; }
  double larger() const { return std::max(printed(), derivation()); }
};

// Utility-loss bound for per-tick, per-agent noise scales scale(t, i).
// The derivation variant uses the exact second moment of p-dimensional
// noise: 2 p s^2 per block for Laplace, p s^2 for Gaussian.
inline UtilityBound utility_bound(const ObjectiveSpec& spec, double initial_gap, std::size_t ticks,
                               const std::function<double(std::size_t, std::size_t)>& scale,
                               NoiseMechanism mechanism = NoiseMechanism::kLaplace) {
  if (!(spec.sigma_bound() > 0.0)) throw std::domain_error("objective is not strongly convex");
  const std::size_t n = spec.agents();
  const auto& g = spec.graph();
  const double rate = contraction_factor(spec);
  const double moment = (mechanism == NoiseMechanism::kLaplace ? 2.0 : 1.0) *
                        static_cast<double>(spec.dimension());
  UtilityBound b;
  b.optimization = std::pow(rate, static_cast<double>(ticks)) * initial_gap;
  double printed = 0.0;
  double power = 1.0;
  for (std::size_t t = 0; t < ticks; ++t) {
    double inner = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = spec.mu() * g.degree(i) * g.confidence(i) * scale(t, i);
      inner += v * v;
    }
    printed += power * inner;
    power *= rate;
  }
  b.noise_printed = printed / (static_cast<double>(n) * spec.l_min());
  b.noise_derivation = moment * printed / (2.0 * static_cast<double>(n) * spec.l_min());
  return b;
}

inline UtilityBound utility_bound(const ObjectiveSpec& spec, double initial_gap, std::size_t ticks,
                               const std::vector<double>& uniform_scales,
                               NoiseMechanism mechanism = NoiseMechanism::kLaplace) {
  detail::require(uniform_scales.size() == spec.agents(), "need one scale per agent");
  return utility_bound(
      spec, initial_gap, ticks,
      [&](std::size_t, std::size_t i) { return uniform_scales[i]; }, mechanism);
}

// Closed form of the printed noise term for time-uniform scales:
// (a / rho)(1 - (1 - rho)^T), a = (1/(n L_min)) sum_i (mu D c s_i)^2.
inline double uniform_noise_term_closed_form(const ObjectiveSpec& spec, std::size_t ticks,
                                             const std::vector<double>& scales) {
  const std::size_t n = spec.agents();
  const auto& g = spec.graph();
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = spec.mu() * g.degree(i) * g.confidence(i) * scales.at(i);
    a += v * v;
  }
  a /= static_cast<double>(n) * spec.l_min();
  const double rho = spec.sigma_bound() / (static_cast<double>(n) * spec.l_max());
  return a / rho * (1.0 - std::pow(1.0 - rho, static_cast<double>(ticks)));
}

}  // namespace dpcd
