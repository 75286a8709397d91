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
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"
#include "dpcd/losses.hpp"

namespace dpcd {

enum class NoiseMechanism { kLaplace, kGaussian };

inline std::string to_string(NoiseMechanism m) {
  return m == NoiseMechanism::kLaplace ? "laplace" : "gaussian";
}

// Per-update Laplace scale 2 L0 / (eps m); the sensitivity of one
// coordinate-descent update is proportional to 1/m.
inline double noise_scale_laplace(double l0, double eps, std::size_t m) {
  detail::require(l0 > 0.0, "L0 must be positive");
  detail::require(eps > 0.0, "epsilon must be positive");
  detail::require(m >= 1, "an agent without data cannot run private updates");
  return 2.0 * l0 / (eps * static_cast<double>(m));
}

// Gaussian scale (standard deviation) 2 L0* sqrt(2 ln(2/delta)) / (eps m).
inline double noise_scale_gaussian(double l0_l2, double eps, double delta,
                                   std::size_t m = 1) {
  detail::require(l0_l2 > 0.0, "L0 must be positive");
  detail::require(eps > 0.0, "epsilon must be positive");
  detail::require(delta > 0.0 && delta <= 1.0, "Gaussian mechanism needs delta in (0,1]");
  detail::require(m >= 1, "an agent without data cannot run private updates");
  return 2.0 * l0_l2 * std::sqrt(2.0 * std::log(2.0 / delta)) /
         (eps * static_cast<double>(m));
}

// Inverse-CDF Laplace(0, scale) draw. Scale 0 returns exactly 0.
inline double sample_laplace(double scale, Rng& rng) {
  if (scale == 0.0) return 0.0;
  double u;
  do {
    u = uniform01(rng) - 0.5;
  } while (u == -0.5);
  const double mag = -std::log1p(-2.0 * std::abs(u));
  return u < 0.0 ? -scale * mag : scale * mag;
}

inline Vector sample_noise(double scale, std::size_t p, Rng& rng,
                           NoiseMechanism mechanism = NoiseMechanism::kLaplace) {
  detail::require(scale >= 0.0, "noise scale must be nonnegative");
  Vector out(p, 0.0);
  if (scale == 0.0) return out;
  for (auto& v : out) {
    v = mechanism == NoiseMechanism::kLaplace ? sample_laplace(scale, rng)
                                              : scale * standard_normal(rng);
  }
  return out;
}

// Running sums behind the three-way composition bound. Appending an
// allocation is O(1), so ledgers can report the composed value per tick.
class CompositionAccumulator {
 public:
  void add(double eps) {
    if (!(eps >= 0.0)) throw std::invalid_argument("allocations must be nonnegative");
    const long double e = eps;
    naive_ += e;
    const long double ee = std::exp(e);
    shrink_ += (ee - 1.0L) * e / (ee + 1.0L);
    squares_ += e * e;
    ++count_;
  }

  std::size_t count() const { return count_; }
  double naive() const { return static_cast<double>(naive_); }

  // min{ sum eps,
  //      sum (e^eps-1)eps/(e^eps+1) + sqrt(sum 2eps^2 log(e + sqrt(sum eps^2)/delta)),
  //      sum (e^eps-1)eps/(e^eps+1) + sqrt(sum 2eps^2 log(1/delta)) }
  // With delta = 0 only the first expression is finite.
  double composed(double delta_bar) const {
    if (!(delta_bar >= 0.0 && delta_bar <= 1.0)) {
      throw std::invalid_argument("delta_bar must be in [0,1]");
    }
    if (count_ == 0) return 0.0;
    long double best = naive_;
    if (delta_bar > 0.0) {
      const long double d = delta_bar;
      const long double second =
          shrink_ + std::sqrt(2.0L * squares_ *
                              std::log(std::exp(1.0L) + std::sqrt(squares_) / d));
      const long double third =
          shrink_ + std::sqrt(2.0L * squares_ * std::log(1.0L / d));
      best = std::min({best, second, third});
    }
    return static_cast<double>(best);
  }

 private:
  long double naive_ = 0.0L;
  long double shrink_ = 0.0L;
  long double squares_ = 0.0L;
  std::size_t count_ = 0;
};

inline double composed_epsilon(std::span<const double> allocations, double delta_bar) {
  CompositionAccumulator acc;
  for (double e : allocations) {
    if (e < 0.0) throw std::invalid_argument("negative allocation");
    acc.add(e);
  }
  return acc.composed(delta_bar);
}

// Total delta of the Gaussian variant: 1 - (1 - delta_bar) prod (1 - delta_t).
inline double composed_delta_gaussian(double delta_bar, std::span<const double> per_step) {
  long double keep = 1.0L - delta_bar;
  for (double d : per_step) keep *= 1.0L - d;
  return static_cast<double>(1.0L - keep);
}

// T_i equal allocations whose composed value equals the budget, found by
// bisection on the (monotone) composition bound.
inline std::vector<double> allocate_uniform(double budget, std::size_t updates,
                                            double delta_bar) {
  detail::require(budget > 0.0, "budget must be positive");
  detail::require(updates >= 1, "need at least one update");
  auto composed_at = [&](long double e) {
    CompositionAccumulator acc;
    for (std::size_t k = 0; k < updates; ++k) acc.add(static_cast<double>(e));
    return static_cast<long double>(acc.composed(delta_bar));
  };
  const long double target = budget;
  long double lo = target / static_cast<long double>(updates);
  // Naive composition binds: the even split is exact.
  if (composed_at(lo) >= target * (1.0L - 1e-15L)) {
    return std::vector<double>(updates, static_cast<double>(lo));
  }
  long double hi = target;
  int expand = 0;
  while (composed_at(hi) < target) {
    hi *= 2.0L;
    if (++expand > 200) throw std::runtime_error("allocate_uniform: cannot bracket budget");
  }
  for (int it = 0; it < 200 && hi - lo > 0.0L; ++it) {
    const long double mid = 0.5L * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (composed_at(mid) <= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double eps = static_cast<double>(lo);
  std::vector<double> out(updates, eps);
  if (std::abs(composed_epsilon(out, delta_bar) - budget) > 1e-9) {
    throw std::runtime_error("allocate_uniform: bisection did not reach the budget");
  }
  return out;
}

// Schedule-aware allocation minimizing the utility-loss noise term:
//   eps(t) = k C^{t/3} budget / lambda  for t in wake_ticks, 0 otherwise,
//   k = (C^{1/3} - 1) / (C^{T/3} - 1),  lambda = sum_{t in wake_ticks} k C^{t/3}.
// Returns a length-T vector indexed by global tick.
inline std::vector<double> allocate_optimal(double budget, std::size_t total_ticks,
                                            double contraction,
                                            std::span<const std::size_t> wake_ticks) {
  detail::require(budget > 0.0, "budget must be positive");
  if (!(contraction > 0.0 && contraction < 1.0)) {
    throw std::invalid_argument("contraction factor C must be in (0,1)");
  }
  if (wake_ticks.empty()) throw std::invalid_argument("empty wake-up schedule");
  const double log_c = std::log(contraction);
  // expm1 keeps k accurate when C is close to 1.
  const double k = std::expm1(log_c / 3.0) /
                   std::expm1(log_c * static_cast<double>(total_ticks) / 3.0);
  std::vector<double> out(total_ticks, 0.0);
  double lambda = 0.0;
  for (std::size_t t : wake_ticks) {
    detail::require(t < total_ticks, "wake tick outside [0, T)");
    lambda += k * std::exp(log_c * static_cast<double>(t) / 3.0);
  }
  for (std::size_t t : wake_ticks) {
    out[t] = k * std::exp(log_c * static_cast<double>(t) / 3.0) * budget / lambda;
  }
  return out;
}

// sum_t C^t / eps(t)^2 over nonzero entries: the part of the utility-loss
// noise term that depends on the allocation.
inline double allocation_noise_term(double contraction, std::span<const double> eps_by_tick) {
  double s = 0.0;
  for (std::size_t t = 0; t < eps_by_tick.size(); ++t) {
    if (eps_by_tick[t] > 0.0) {
      s += std::pow(contraction, static_cast<double>(t)) / (eps_by_tick[t] * eps_by_tick[t]);
    }
  }
  return s;
}

struct FeatureBound {
  double lo;
  double hi;
};

// Local-DP baseline: each coordinate gets Laplace noise of scale
// (hi - lo) * p / eps, so the whole point is eps-DP by L1 composition.
inline LocalDataset perturb_dataset_local_dp(const LocalDataset& data, double eps,
                                             std::span<const FeatureBound> bounds, Rng& rng) {
  detail::require(eps > 0.0, "epsilon must be positive");
  const std::size_t p = data.dimension();
  detail::require(bounds.size() == p, "need one bound per feature");
  LocalDataset out = data;
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t k = 0; k < p; ++k) {
      const double v = data.features[r][k];
      if (v < bounds[k].lo || v > bounds[k].hi) {
        throw std::invalid_argument(
            detail::concat("feature ", k, " of point ", r, " outside declared bounds"));
      }
      const double scale = (bounds[k].hi - bounds[k].lo) * static_cast<double>(p) / eps;
      out.features[r][k] = v + (std::isinf(eps) ? 0.0 : sample_laplace(scale, rng));
    }
  }
  return out;
}

// Budget and spending record of one agent in one run.
class PrivacyLedger {
 public:
  struct Entry {
    std::size_t tick;
    double epsilon;
    double delta;
    double noise_scale;
    double cumulative_naive;
    double cumulative_composed;
  };

  PrivacyLedger(double epsilon_bar, double delta_bar, std::vector<double> plan,
                NoiseMechanism mechanism = NoiseMechanism::kLaplace,
                std::vector<double> delta_plan = {})
      : epsilon_bar_(epsilon_bar),
        delta_bar_(delta_bar),
        plan_(std::move(plan)),
        delta_plan_(std::move(delta_plan)),
        mechanism_(mechanism) {
    detail::require(epsilon_bar_ > 0.0, "budget must be positive");
    detail::require(delta_bar_ >= 0.0 && delta_bar_ <= 1.0, "delta_bar must be in [0,1]");
    for (double e : plan_) detail::require(e > 0.0, "planned allocations must be positive");
    if (mechanism_ == NoiseMechanism::kGaussian) {
      detail::require(delta_plan_.size() == plan_.size(),
                      "Gaussian ledgers need one delta per planned update");
    }
  }

  double epsilon_bar() const { return epsilon_bar_; }
  double delta_bar() const { return delta_bar_; }
  NoiseMechanism mechanism() const { return mechanism_; }
  const std::vector<double>& plan() const { return plan_; }
  const std::vector<Entry>& spent() const { return spent_; }

  bool exhausted() const { return spent_.size() >= plan_.size(); }
  std::size_t remaining() const { return plan_.size() - spent_.size(); }

  // Next planned (epsilon, delta); nullopt once the plan is used up.
  std::optional<std::pair<double, double>> next_allocation() const {
    if (exhausted()) return std::nullopt;
    const std::size_t k = spent_.size();
    return std::pair{plan_[k], delta_plan_.empty() ? 0.0 : delta_plan_[k]};
  }

  void record(std::size_t tick, double noise_scale) {
    if (exhausted()) throw std::logic_error("privacy budget already exhausted");
    const std::size_t k = spent_.size();
    const double eps = plan_[k];
    const double delta = delta_plan_.empty() ? 0.0 : delta_plan_[k];
    acc_.add(eps);
    spent_.push_back({tick, eps, delta, noise_scale, acc_.naive(), acc_.composed(delta_bar_)});
  }

  double naive_spent() const { return acc_.naive(); }
  double composed_spent() const { return acc_.composed(delta_bar_); }

  // Total delta actually guaranteed so far (equals delta_bar for Laplace).
  double delta_spent() const {
    if (mechanism_ == NoiseMechanism::kLaplace) return delta_bar_;
    std::vector<double> ds;
    for (const auto& e : spent_) ds.push_back(e.delta);
    return composed_delta_gaussian(delta_bar_, ds);
  }

  void charge_warm_start(double eps) { warm_start_epsilon_ += eps; }
  double warm_start_epsilon() const { return warm_start_epsilon_; }

 private:
  double epsilon_bar_;
  double delta_bar_;
  std::vector<double> plan_;
  std::vector<double> delta_plan_;
  NoiseMechanism mechanism_;
  std::vector<Entry> spent_;
  CompositionAccumulator acc_;
  double warm_start_epsilon_ = 0.0;
};

// CSV columns: agent,tick,epsilon_spent,noise_scale,cumulative_naive,cumulative_composed
inline void write_ledger_csv(std::ostream& os, const std::vector<PrivacyLedger>& ledgers) {
  os << "agent,tick,epsilon_spent,noise_scale,cumulative_naive,cumulative_composed\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < ledgers.size(); ++i) {
    for (const auto& e : ledgers[i].spent()) {
      os << i << ',' << e.tick << ',' << e.epsilon << ',' << e.noise_scale << ','
         << e.cumulative_naive << ',' << e.cumulative_composed << '\n';
    }
  }
}

}  // namespace dpcd
