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
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"
#include "dpcd/graph.hpp"
#include "dpcd/losses.hpp"
#include "dpcd/objective.hpp"
#include "dpcd/privacy.hpp"

namespace dpcd {

// ---------------------------------------------------------------------------
// Synthetic linear classification
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t agents = 100;
  std::size_t dimension = 10;
  double gamma = 0.1;
  double flip_probability = 0.05;
  std::size_t min_points = 10;
  std::size_t max_points = 100;
  std::size_t test_points = 100;
  // Targets are random unit vectors in the span of the first
  // `target_subspace` coordinates (0 or >= p means all of R^p). A
  // low-dimensional span keeps the angle graph informative as p grows.
  std::size_t target_subspace = 2;
  // Features are uniform in [-feature_scale, feature_scale]^p. Zero picks
  // 1/p, which keeps ||x||_1 <= 1 and hence per-point logistic gradients
  // within an L1 bound of 1.
  double feature_scale = 0.0;
  double weight_threshold = kDefaultWeightThreshold;
  double confidence_floor = kDefaultConfidenceFloor;

  double resolved_feature_scale() const {
    return feature_scale > 0.0 ? feature_scale : 1.0 / static_cast<double>(dimension);
  }
};

struct SyntheticTask {
  std::size_t dimension = 0;
  double feature_scale = 1.0;
  double flip_probability = 0.0;
  std::vector<Vector> targets;
  std::vector<LocalDataset> train;
  std::vector<std::vector<Vector>> test_features;
  std::vector<std::vector<double>> test_labels;        // noiseless
  std::vector<std::vector<double>> test_labels_noisy;  // same flip rate as train

  std::size_t agents() const { return train.size(); }
  std::vector<std::size_t> train_sizes() const {
    std::vector<std::size_t> m;
    for (const auto& d : train) m.push_back(d.size());
    return m;
  }
  std::vector<FeatureBound> feature_bounds() const {
    return std::vector<FeatureBound>(dimension, {-feature_scale, feature_scale});
  }
};

inline double sign_label(double z) { return z >= 0.0 ? 1.0 : -1.0; }

inline Vector random_unit_vector(std::size_t p, Rng& rng) {
  Vector v(p);
  double nrm = 0.0;
  do {
    for (auto& x : v) x = standard_normal(rng);
    nrm = norm2(v);
  } while (nrm == 0.0);
  for (auto& x : v) x /= nrm;
  return v;
}

// Per-agent random target separators, uniform training-set sizes in
// [min_points, max_points], uniform features, labels sign(target^T x) with
// independent flips, and an angle-based similarity graph.
inline std::pair<SyntheticTask, NetworkGraph> generate_synthetic(const SyntheticConfig& cfg,
                                                                 Rng& rng) {
  detail::require(cfg.agents >= 2, "need at least two agents");
  detail::require(cfg.dimension >= 2, "need dimension >= 2");
  detail::require(cfg.min_points >= 1 && cfg.min_points <= cfg.max_points,
                  "bad training-set size range");
  detail::require(cfg.flip_probability >= 0.0 && cfg.flip_probability <= 1.0,
                  "flip probability must be in [0,1]");
  const std::size_t n = cfg.agents;
  const std::size_t p = cfg.dimension;
  SyntheticTask task;
  task.dimension = p;
  task.feature_scale = cfg.resolved_feature_scale();
  task.flip_probability = cfg.flip_probability;
  const std::size_t span_dim =
      cfg.target_subspace == 0 ? p : std::min(cfg.target_subspace, p);
  for (std::size_t i = 0; i < n; ++i) {
    Vector t = random_unit_vector(span_dim, rng);
    t.resize(p, 0.0);
    task.targets.push_back(std::move(t));
  }

  auto draw_point = [&](Vector& x) {
    x.resize(p);
    for (auto& v : x) v = task.feature_scale * (2.0 * uniform01(rng) - 1.0);
  };
  auto flip = [&](double y) {
    return uniform01(rng) < cfg.flip_probability ? -y : y;
  };
  const std::size_t span = cfg.max_points - cfg.min_points + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = cfg.min_points + uniform_index(rng, span);
    LocalDataset d;
    d.lambda = 1.0 / static_cast<double>(m);
    d.features.resize(m);
    d.labels.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      draw_point(d.features[k]);
      d.labels[k] = flip(sign_label(dot(task.targets[i], d.features[k])));
    }
    task.train.push_back(std::move(d));

    std::vector<Vector> tx(cfg.test_points);
    std::vector<double> ty(cfg.test_points), ty_noisy(cfg.test_points);
    for (std::size_t k = 0; k < cfg.test_points; ++k) {
      draw_point(tx[k]);
      ty[k] = sign_label(dot(task.targets[i], tx[k]));
      ty_noisy[k] = flip(ty[k]);
    }
    task.test_features.push_back(std::move(tx));
    task.test_labels.push_back(std::move(ty));
    task.test_labels_noisy.push_back(std::move(ty_noisy));
  }
  NetworkGraph g = build_angle_graph(task.targets, cfg.gamma, cfg.weight_threshold);
  g = set_confidences(g, task.train_sizes(), cfg.confidence_floor);
  return {std::move(task), std::move(g)};
}

inline std::vector<LossPtr> make_logistic_losses(
    const std::vector<LocalDataset>& train, double point_lipschitz_l1 = 1.0,
    std::optional<double> point_lipschitz_l2 = std::nullopt) {
  std::vector<LossPtr> losses;
  losses.reserve(train.size());
  for (const auto& d : train) {
    losses.push_back(std::make_shared<LogisticLoss>(d, point_lipschitz_l1, point_lipschitz_l2));
  }
  return losses;
}

// Logistic losses with the bounds implied by the task's feature box:
// ||x||_1 <= p s and ||x||_2 <= sqrt(p) s.
inline std::vector<LossPtr> make_logistic_losses(const SyntheticTask& task) {
  const double p = static_cast<double>(task.dimension);
  return make_logistic_losses(task.train, p * task.feature_scale, std::sqrt(p) * task.feature_scale);
}

struct Evaluation {
  std::vector<double> per_agent;     // NaN for agents without test data
  double aggregate = 0.0;            // unweighted mean over evaluated agents
  std::vector<std::size_t> excluded; // agents without test data
};

namespace detail {

inline Evaluation finish_evaluation(std::vector<double> per_agent) {
  Evaluation e;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < per_agent.size(); ++i) {
    if (std::isnan(per_agent[i])) {
      e.excluded.push_back(i);
    } else {
      sum += per_agent[i];
      ++count;
    }
  }
  e.aggregate = count > 0 ? sum / static_cast<double>(count)
                          : std::numeric_limits<double>::quiet_NaN();
  e.per_agent = std::move(per_agent);
  return e;
}

}  // namespace detail

// Per-agent test accuracy of sign(theta_i^T x).
inline Evaluation evaluate_accuracy(const ModelStack& theta, const SyntheticTask& task,
                                    bool noisy_labels = false) {
  detail::require(theta.agents() == task.agents() && theta.dimension() == task.dimension,
                  "model stack does not match the task");
  std::vector<double> acc(task.agents(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < task.agents(); ++i) {
    const auto& xs = task.test_features[i];
    const auto& ys = noisy_labels ? task.test_labels_noisy[i] : task.test_labels[i];
    if (xs.empty()) continue;
    std::size_t correct = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (sign_label(dot(theta.block(i), xs[k])) == ys[k]) ++correct;
    }
    acc[i] = static_cast<double>(correct) / static_cast<double>(xs.size());
  }
  return detail::finish_evaluation(std::move(acc));
}

// ---------------------------------------------------------------------------
// Ratings (MovieLens u.data format)
// ---------------------------------------------------------------------------

struct Rating {
  std::size_t item;  // 0-based item index (file id - 1)
  double value;
};

struct RatingsTask {
  std::size_t items = 0;
  std::vector<long long> user_ids;               // original ids, ascending
  std::vector<double> user_means;                // mean of training ratings
  std::vector<std::vector<Rating>> train;        // mean-centered
  std::vector<std::vector<Rating>> test;         // mean-centered with the train mean
  std::size_t lines = 0;

  std::size_t users() const { return train.size(); }
  std::vector<std::size_t> train_sizes() const {
    std::vector<std::size_t> m;
    for (const auto& r : train) m.push_back(r.size());
    return m;
  }
};

inline std::size_t train_count_for(std::size_t m) {
  return static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(m)));
}

// Parses "user item rating timestamp" lines (tabs or spaces). Each user's
// ratings are split 80/20 by a shuffle seeded from (seed, user id), then
// centered by the user's training mean. Users with fewer than
// `min_ratings` ratings are dropped.
inline RatingsTask load_ratings(std::istream& is, std::uint64_t seed,
                                std::size_t min_ratings = 0) {
  std::map<long long, std::vector<Rating>> by_user;
  RatingsTask task;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long user, item;
    double rating;
    long long timestamp;
    if (!(ls >> user >> item >> rating >> timestamp)) {
      throw ParseError("expected 'user item rating timestamp'", lineno);
    }
    std::string rest;
    if (ls >> rest) throw ParseError("trailing tokens", lineno);
    if (item < 1) throw ParseError("item ids start at 1", lineno);
    if (!std::isfinite(rating)) throw ParseError("non-finite rating", lineno);
    by_user[user].push_back({static_cast<std::size_t>(item - 1), rating});
    task.items = std::max(task.items, static_cast<std::size_t>(item));
    ++task.lines;
  }
  for (auto& [user, ratings] : by_user) {
    if (ratings.size() < min_ratings) continue;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(user)));
    for (std::size_t k = ratings.size(); k > 1; --k) {
      std::swap(ratings[k - 1], ratings[uniform_index(rng, k)]);
    }
    const std::size_t n_train = train_count_for(ratings.size());
    std::vector<Rating> tr(ratings.begin(), ratings.begin() + static_cast<long>(n_train));
    std::vector<Rating> te(ratings.begin() + static_cast<long>(n_train), ratings.end());
    double mean = 0.0;
    for (const auto& r : tr) mean += r.value;
    mean = tr.empty() ? 0.0 : mean / static_cast<double>(tr.size());
    for (auto& r : tr) r.value -= mean;
    for (auto& r : te) r.value -= mean;
    task.user_ids.push_back(user);
    task.user_means.push_back(mean);
    task.train.push_back(std::move(tr));
    task.test.push_back(std::move(te));
  }
  return task;
}

inline RatingsTask load_ratings_file(const std::string& path, std::uint64_t seed,
                                     std::size_t min_ratings = 0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file " + path);
  return load_ratings(in, seed, min_ratings);
}

// CSV, one row per item.
inline std::vector<Vector> read_features_csv(std::istream& is) {
  return [&] {
    const ModelStack m = read_model_csv(is);
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < m.agents(); ++i) rows.push_back(m.block_copy(i));
    return rows;
  }();
}

inline void write_features_csv(std::ostream& os, const std::vector<Vector>& rows) {
  write_model_csv(os, ModelStack::from_blocks(rows));
}

// Standard-normal rows scaled to unit L2 norm.
inline std::vector<Vector> make_fallback_features(std::size_t items, std::size_t p, Rng& rng) {
  detail::require(p >= 1, "feature dimension must be positive");
  std::vector<Vector> rows;
  rows.reserve(items);
  for (std::size_t j = 0; j < items; ++j) rows.push_back(random_unit_vector(p, rng));
  return rows;
}

// Loads `path` when non-empty, otherwise generates fallback features.
inline std::vector<Vector> load_or_make_features(const std::string& path, std::size_t items,
                                                 std::size_t p, Rng& rng) {
  if (path.empty()) return make_fallback_features(items, p, rng);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open feature file " + path);
  auto rows = read_features_csv(in);
  if (rows.size() != items) {
    throw std::invalid_argument(detail::concat("feature file has ", rows.size(),
                                               " rows, expected ", items));
  }
  return rows;
}

// Quadratic-loss datasets (phi_item, centered rating) with lambda = 1/m.
inline std::vector<LocalDataset> make_rating_datasets(const RatingsTask& task,
                                                      const std::vector<Vector>& features) {
  std::vector<LocalDataset> out;
  out.reserve(task.users());
  for (std::size_t u = 0; u < task.users(); ++u) {
    LocalDataset d;
    for (const auto& r : task.train[u]) {
      if (r.item >= features.size()) {
        throw std::out_of_range(detail::concat("item ", r.item + 1, " has no feature row"));
      }
      d.features.push_back(features[r.item]);
      d.labels.push_back(r.value);
    }
    d.lambda = d.features.empty() ? 0.0 : 1.0 / static_cast<double>(d.features.size());
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<LossPtr> make_quadratic_losses(const std::vector<LocalDataset>& data,
                                                  double clip = kDefaultClip) {
  std::vector<LossPtr> losses;
  for (const auto& d : data) losses.push_back(std::make_shared<ClippedQuadraticLoss>(d, clip));
  return losses;
}

// Training-rating vectors (raw ratings, zero when unrated) for similarity.
inline std::vector<Vector> rating_rows(const RatingsTask& task) {
  std::vector<Vector> rows(task.users(), Vector(task.items, 0.0));
  for (std::size_t u = 0; u < task.users(); ++u) {
    for (const auto& r : task.train[u]) rows[u][r.item] = r.value + task.user_means[u];
  }
  return rows;
}

// Per-user RMSE of theta_u^T phi_item on held-out centered ratings.
inline Evaluation evaluate_rmse(const ModelStack& theta, const RatingsTask& task,
                                const std::vector<Vector>& features) {
  detail::require(theta.agents() == task.users(), "model stack does not match the task");
  std::vector<double> rmse(task.users(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t u = 0; u < task.users(); ++u) {
    const auto& te = task.test[u];
    if (te.empty()) continue;
    double s = 0.0;
    for (const auto& r : te) {
      if (r.item >= features.size()) {
        throw std::out_of_range(detail::concat("item ", r.item + 1, " has no feature row"));
      }
      const double e = dot(theta.block(u), features[r.item]) - r.value;
      s += e * e;
    }
    rmse[u] = std::sqrt(s / static_cast<double>(te.size()));
  }
  return detail::finish_evaluation(std::move(rmse));
}

// Writes a u.data-format file from a low-rank preference model: a stand-in
// for MovieLens-100K when the real file is not available. Ratings are
// integers in [1,5]; per-user counts are heavy-tailed with minimum
// `min_per_user`.
inline void write_synthetic_ratings(std::ostream& os, std::size_t users, std::size_t items,
                                    std::size_t rank, Rng& rng, std::size_t min_per_user = 20,
                                    std::size_t max_per_user = 300) {
  detail::require(items >= max_per_user, "need more items than ratings per user");
  std::vector<Vector> item_f(items, Vector(rank));
  std::vector<double> item_bias(items);
  for (std::size_t j = 0; j < items; ++j) {
    for (auto& v : item_f[j]) v = standard_normal(rng);
    item_bias[j] = 0.5 * standard_normal(rng);
  }
  std::vector<std::size_t> perm(items);
  for (std::size_t u = 0; u < users; ++u) {
    Vector uf(rank);
    for (auto& v : uf) v = standard_normal(rng) / std::sqrt(static_cast<double>(rank));
    const double user_bias = 3.5 + 0.4 * standard_normal(rng);
    // Heavy-tailed count: min * exp(Exp(1) * 1.2), capped.
    const double expo = -std::log1p(-uniform01(rng));
    const auto count = std::min<std::size_t>(
        max_per_user,
        static_cast<std::size_t>(static_cast<double>(min_per_user) * std::exp(1.2 * expo)));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k < count; ++k) {
      std::swap(perm[k], perm[k + uniform_index(rng, items - k)]);
      const std::size_t j = perm[k];
      const double raw = user_bias + item_bias[j] + dot(uf, item_f[j]) + 0.5 * standard_normal(rng);
      const double r = std::clamp(std::round(raw), 1.0, 5.0);
      os << (u + 1) << '\t' << (j + 1) << '\t' << r << '\t' << (880000000 + u * 1000 + k) << '\n';
    }
  }
}

}  // namespace dpcd
