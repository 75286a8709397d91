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
#include <deque>
#include <istream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"

namespace dpcd {

inline constexpr double kDefaultWeightThreshold = 1e-8;
inline constexpr double kDefaultConfidenceFloor = 0.01;

struct Neighbor {
  std::size_t index;
  double weight;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Weighted undirected similarity graph over agents.
//
// Weights are stored densely (row-major n x n); neighbor lists are cached
// in ascending index order. Instances are immutable once built, except
// through with_confidences() which returns a copy.
class NetworkGraph {
 public:
  // Validates symmetry, nonnegativity, zero diagonal and connectivity.
  // Confidences default to 1 when empty.
  NetworkGraph(std::size_t n, std::vector<double> weights,
               std::vector<double> confidences = {})
      : n_(n), weights_(std::move(weights)), confidences_(std::move(confidences)) {
    detail::require(n_ >= 1, "graph needs at least one agent");
    detail::require(weights_.size() == n_ * n_, "weight matrix must be n x n");
    if (confidences_.empty()) confidences_.assign(n_, 1.0);
    detail::require(confidences_.size() == n_, "confidences must have length n");
    for (std::size_t i = 0; i < n_; ++i) {
      if (weights_[i * n_ + i] != 0.0) {
        throw GraphError(detail::concat("nonzero diagonal weight at agent ", i));
      }
      for (std::size_t j = 0; j < n_; ++j) {
        const double w = weights_[i * n_ + j];
        if (!(w >= 0.0) || !std::isfinite(w)) {
          throw GraphError(detail::concat("invalid weight W[", i, "][", j, "]"));
        }
        if (w != weights_[j * n_ + i]) {
          throw GraphError(detail::concat("asymmetric weight between ", i, " and ", j));
        }
      }
      const double c = confidences_[i];
      detail::require(c > 0.0 && c <= 1.0,
                      detail::concat("confidence of agent ", i, " outside (0,1]"));
    }
    degrees_.assign(n_, 0.0);
    adjacency_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        const double w = weights_[i * n_ + j];
        if (w > 0.0) {
          degrees_[i] += w;
          adjacency_[i].push_back({j, w});
        }
      }
    }
    if (!is_connected()) {
      throw GraphError(detail::concat(
          "graph is disconnected (", count_components(), " components)"));
    }
  }

  std::size_t size() const { return n_; }
  double weight(std::size_t i, std::size_t j) const {
    check_index(i);
    check_index(j);
    return weights_[i * n_ + j];
  }
  double degree(std::size_t i) const {
    check_index(i);
    return degrees_[i];
  }
  double confidence(std::size_t i) const {
    check_index(i);
    return confidences_[i];
  }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& degrees() const { return degrees_; }
  const std::vector<double>& confidences() const { return confidences_; }

  // Agents j with W[i][j] > 0, ascending by index.
  const std::vector<Neighbor>& neighbors(std::size_t i) const {
    check_index(i);
    return adjacency_[i];
  }

  std::size_t edge_count() const {
    std::size_t e = 0;
    for (const auto& adj : adjacency_) e += adj.size();
    return e / 2;
  }

  bool is_connected() const { return count_components() == 1; }

  // Breadth-first component count over nonzero-weight edges.
  std::size_t count_components() const {
    std::vector<bool> seen(n_, false);
    std::size_t components = 0;
    for (std::size_t s = 0; s < n_; ++s) {
      if (seen[s]) continue;
      ++components;
      std::deque<std::size_t> queue{s};
      seen[s] = true;
      while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (const auto& nb : adjacency_[u]) {
          if (!seen[nb.index]) {
            seen[nb.index] = true;
            queue.push_back(nb.index);
          }
        }
      }
    }
    return components;
  }

  NetworkGraph with_confidences(std::vector<double> confidences) const {
    return NetworkGraph(n_, weights_, std::move(confidences));
  }

 private:
  void check_index(std::size_t i) const {
    if (i >= n_) {
      throw std::out_of_range(
          detail::concat("agent index ", i, " out of range for n=", n_));
    }
  }

  std::size_t n_;
  std::vector<double> weights_;
  std::vector<double> confidences_;
  std::vector<double> degrees_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

inline std::vector<Neighbor> neighbors(const NetworkGraph& g, std::size_t i) {
  return g.neighbors(i);
}

// W[i][j] = exp((cos(angle_ij) - 1) / gamma); entries below `threshold`
// are dropped.
inline NetworkGraph build_angle_graph(const std::vector<Vector>& targets,
                                      double gamma,
                                      double threshold = kDefaultWeightThreshold) {
  detail::require(!targets.empty(), "need at least one target model");
  detail::require(gamma > 0.0, "gamma must be positive");
  detail::require(threshold >= 0.0, "threshold must be nonnegative");
  const std::size_t n = targets.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(targets[i].size() == targets[0].size(),
                    "target models must share a dimension");
    norms[i] = norm2(targets[i]);
    if (!(norms[i] > 0.0)) {
      throw std::invalid_argument(
          detail::concat("target model ", i, " has zero norm"));
    }
  }
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double cosine = dot(targets[i], targets[j]) / (norms[i] * norms[j]);
      cosine = std::clamp(cosine, -1.0, 1.0);
      double wij = std::exp((cosine - 1.0) / gamma);
      if (wij < threshold) wij = 0.0;
      w[i * n + j] = wij;
      w[j * n + i] = wij;
    }
  }
  try {
    return NetworkGraph(n, std::move(w));
  } catch (const GraphError& e) {
    throw GraphError(std::string(e.what()) +
                     "; lower the weight threshold or increase gamma");
  }
}

// Binary graph: W[i][j] = 1 if i is among the k most cosine-similar rows
// to j, or vice versa. Ties are broken by ascending agent index.
inline NetworkGraph build_knn_cosine_graph(const std::vector<Vector>& rows,
                                           std::size_t k) {
  const std::size_t n = rows.size();
  detail::require(n >= 1, "need at least one row");
  detail::require(k >= 1, "k must be positive");
  detail::require(n == 1 || k < n, "k must be smaller than the number of rows");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(rows[i].size() == rows[0].size(), "rows must share a dimension");
    norms[i] = norm2(rows[i]);
    if (!(norms[i] > 0.0)) {
      throw std::invalid_argument(detail::concat("row ", i, " has zero norm"));
    }
  }
  std::vector<double> w(n * n, 0.0);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < n; ++j) {
    scored.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      scored.emplace_back(dot(rows[i], rows[j]) / (norms[i] * norms[j]), i);
    }
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    for (std::size_t r = 0; r < take; ++r) {
      const std::size_t i = scored[r].second;
      w[i * n + j] = 1.0;
      w[j * n + i] = 1.0;
    }
  }
  return NetworkGraph(n, std::move(w));
}

// c_i = max(m_i / max_j m_j, floor).
inline std::vector<double> confidences_from_sizes(
    const std::vector<std::size_t>& dataset_sizes,
    double floor = kDefaultConfidenceFloor) {
  detail::require(floor > 0.0 && floor <= 1.0, "confidence floor must be in (0,1]");
  std::size_t max_size = 0;
  for (auto m : dataset_sizes) max_size = std::max(max_size, m);
  if (max_size == 0) throw std::invalid_argument("all dataset sizes are zero");
  std::vector<double> c(dataset_sizes.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = std::max(static_cast<double>(dataset_sizes[i]) /
                        static_cast<double>(max_size),
                    floor);
  }
  return c;
}

inline NetworkGraph set_confidences(const NetworkGraph& g,
                                    const std::vector<std::size_t>& dataset_sizes,
                                    double floor = kDefaultConfidenceFloor) {
  detail::require(dataset_sizes.size() == g.size(),
                  "dataset_sizes must have one entry per agent");
  return g.with_confidences(confidences_from_sizes(dataset_sizes, floor));
}

// Edge-list text format: "n <count>" then one "i j w" line per edge (i < j).
inline void write_edge_list(std::ostream& os, const NetworkGraph& g) {
  os << "n " << g.size() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (const auto& nb : g.neighbors(i)) {
      if (nb.index > i) os << i << ' ' << nb.index << ' ' << nb.weight << '\n';
    }
  }
}

inline NetworkGraph read_edge_list(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t n = 0;
  bool have_header = false;
  std::vector<double> w;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!have_header) {
      std::string tag;
      if (!(ls >> tag >> n) || tag != "n" || n == 0) {
        throw ParseError("expected header 'n <count>'", lineno);
      }
      have_header = true;
      w.assign(n * n, 0.0);
      continue;
    }
    std::size_t i, j;
    double wij;
    if (!(ls >> i >> j >> wij)) throw ParseError("expected 'i j w'", lineno);
    std::string rest;
    if (ls >> rest) throw ParseError("trailing tokens on edge line", lineno);
    if (i >= n || j >= n) throw ParseError("edge endpoint out of range", lineno);
    if (i == j) throw ParseError("self loop", lineno);
    w[i * n + j] = wij;
    w[j * n + i] = wij;
  }
  if (!have_header) throw ParseError("missing header", lineno);
  return NetworkGraph(n, std::move(w));
}

}  // namespace dpcd
