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
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpcd/common.hpp"
#include "dpcd/graph.hpp"
#include "dpcd/losses.hpp"

namespace dpcd {

// Stacked personal models: n blocks of p scalars, block i is agent i's model.
class ModelStack {
 public:
  ModelStack() = default;
  ModelStack(std::size_t n, std::size_t p, double fill = 0.0)
      : n_(n), p_(p), data_(n * p, fill) {}
  ModelStack(std::size_t n, std::size_t p, std::vector<double> flat)
      : n_(n), p_(p), data_(std::move(flat)) {
    detail::require(data_.size() == n_ * p_, "flat storage must hold n*p values");
  }

  static ModelStack from_blocks(const std::vector<Vector>& blocks) {
    detail::require(!blocks.empty(), "need at least one block");
    ModelStack s(blocks.size(), blocks.front().size());
    for (std::size_t i = 0; i < blocks.size(); ++i) s.set_block(i, blocks[i]);
    return s;
  }

  std::size_t agents() const { return n_; }
  std::size_t dimension() const { return p_; }

  std::span<double> block(std::size_t i) {
    check(i);
    return {data_.data() + i * p_, p_};
  }
  std::span<const double> block(std::size_t i) const {
    check(i);
    return {data_.data() + i * p_, p_};
  }
  void set_block(std::size_t i, std::span<const double> v) {
    detail::require(v.size() == p_, "block dimension mismatch");
    std::copy(v.begin(), v.end(), block(i).begin());
  }
  Vector block_copy(std::size_t i) const {
    auto b = block(i);
    return {b.begin(), b.end()};
  }

  const std::vector<double>& flat() const { return data_; }
  std::vector<double>& flat() { return data_; }

  friend bool operator==(const ModelStack&, const ModelStack&) = default;

 private:
  void check(std::size_t i) const {
    if (i >= n_) {
      throw std::out_of_range(detail::concat("block ", i, " out of range for n=", n_));
    }
  }

  std::size_t n_ = 0;
  std::size_t p_ = 0;
  std::vector<double> data_;
};

// CSV: one row per agent, p comma-separated decimals.
inline void write_model_csv(std::ostream& os, const ModelStack& theta) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < theta.agents(); ++i) {
    auto b = theta.block(i);
    for (std::size_t k = 0; k < b.size(); ++k) {
      if (k) os << ',';
      os << b[k];
    }
    os << '\n';
  }
}

inline ModelStack read_model_csv(std::istream& is) {
  std::vector<Vector> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Vector row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ParseError("bad decimal '" + cell + "'", lineno);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("ragged model row", lineno);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty model file", lineno);
  return ModelStack::from_blocks(rows);
}

// Graph-regularized objective
//   Q(Theta) = 1/2 sum_{i<j} W_ij ||Theta_i - Theta_j||^2
//              + mu sum_i D_ii c_i L_i(Theta_i)
// with block Lipschitz constants L_i = D_ii (1 + mu c_i L_i^loc) and the
// strong convexity lower bound sigma = mu min_i D_ii c_i sigma_i^loc.
class ObjectiveSpec {
 public:
  ObjectiveSpec(std::shared_ptr<const NetworkGraph> graph, std::vector<LossPtr> losses,
                double mu)
      : graph_(std::move(graph)), losses_(std::move(losses)), mu_(mu) {
    detail::require(graph_ != nullptr, "graph is required");
    detail::require(mu_ > 0.0, "mu must be positive");
    detail::require(losses_.size() == graph_->size(), "need one loss per agent");
    p_ = losses_.front()->dimension();
    const std::size_t n = graph_->size();
    block_lipschitz_.resize(n);
    local_.resize(n);
    sigma_bound_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      detail::require(losses_[i] != nullptr, "null loss");
      detail::require(losses_[i]->dimension() == p_, "losses must share a dimension");
      local_[i] = losses_[i]->constants();
      const double d = graph_->degree(i);
      const double c = graph_->confidence(i);
      block_lipschitz_[i] = d * (1.0 + mu_ * c * local_[i].lipschitz_grad);
      sigma_bound_ = std::min(sigma_bound_, mu_ * d * c * local_[i].strong_convexity);
      if (d == 0.0) isolated_.push_back(i);
    }
    l_min_ = *std::min_element(block_lipschitz_.begin(), block_lipschitz_.end());
    l_max_ = *std::max_element(block_lipschitz_.begin(), block_lipschitz_.end());
  }

  const NetworkGraph& graph() const { return *graph_; }
  std::shared_ptr<const NetworkGraph> graph_ptr() const { return graph_; }
  const LossModel& loss(std::size_t i) const { return *losses_.at(i); }
  const std::vector<LossPtr>& losses() const { return losses_; }
  std::size_t agents() const { return graph_->size(); }
  std::size_t dimension() const { return p_; }
  double mu() const { return mu_; }

  double block_lipschitz(std::size_t i) const { return block_lipschitz_.at(i); }
  const std::vector<double>& block_lipschitz() const { return block_lipschitz_; }
  const LossConstants& local_constants(std::size_t i) const { return local_.at(i); }
  double sigma_bound() const { return sigma_bound_; }
  double l_min() const { return l_min_; }
  double l_max() const { return l_max_; }
  // Agents with zero degree; their block of Q does not couple to the rest.
  const std::vector<std::size_t>& isolated_agents() const { return isolated_; }

  // Step mixing weight 1 / (1 + mu c_i L_i^loc).
  double alpha(std::size_t i) const {
    return 1.0 / (1.0 + mu_ * graph_->confidence(i) * local_.at(i).lipschitz_grad);
  }

  void check_models(const ModelStack& theta) const {
    if (theta.agents() != agents() || theta.dimension() != p_) {
      throw std::invalid_argument(detail::concat(
          "model stack is ", theta.agents(), "x", theta.dimension(), ", expected ",
          agents(), "x", p_));
    }
  }

 private:
  std::shared_ptr<const NetworkGraph> graph_;
  std::vector<LossPtr> losses_;
  double mu_;
  std::size_t p_ = 0;
  std::vector<double> block_lipschitz_;
  std::vector<LossConstants> local_;
  double sigma_bound_ = 0.0;
  double l_min_ = 0.0;
  double l_max_ = 0.0;
  std::vector<std::size_t> isolated_;
};

inline double objective_value(const ObjectiveSpec& spec, const ModelStack& theta) {
  spec.check_models(theta);
  const auto& g = spec.graph();
  const std::size_t p = spec.dimension();
  double smooth = 0.0;
  for (std::size_t i = 0; i < spec.agents(); ++i) {
    auto ti = theta.block(i);
    for (const auto& nb : g.neighbors(i)) {
      if (nb.index <= i) continue;
      auto tj = theta.block(nb.index);
      double d2 = 0.0;
      for (std::size_t k = 0; k < p; ++k) {
        const double d = ti[k] - tj[k];
        d2 += d * d;
      }
      smooth += nb.weight * d2;
    }
  }
  double local = 0.0;
  for (std::size_t i = 0; i < spec.agents(); ++i) {
    const double weight = g.degree(i) * g.confidence(i);
    if (weight == 0.0) continue;
    local += weight * spec.loss(i).value(theta.block(i));
  }
  return 0.5 * smooth + spec.mu() * local;
}

// [grad Q]_i = D_ii (Theta_i + mu c_i grad L_i(Theta_i)) - sum_j W_ij Theta_j
inline void partial_gradient(const ObjectiveSpec& spec, const ModelStack& theta,
                             std::size_t i, std::span<double> out) {
  spec.check_models(theta);
  const auto& g = spec.graph();
  const std::size_t p = spec.dimension();
  detail::require(out.size() == p, "output dimension mismatch");
  const double d = g.degree(i);
  auto ti = theta.block(i);
  spec.loss(i).gradient(ti, out);
  const double mc = spec.mu() * g.confidence(i);
  for (std::size_t k = 0; k < p; ++k) out[k] = d * (ti[k] + mc * out[k]);
  for (const auto& nb : g.neighbors(i)) axpy(-nb.weight, theta.block(nb.index), out);
}

inline Vector partial_gradient(const ObjectiveSpec& spec, const ModelStack& theta,
                               std::size_t i) {
  Vector out(spec.dimension());
  partial_gradient(spec, theta, i, out);
  return out;
}

inline double full_gradient_norm(const ObjectiveSpec& spec, const ModelStack& theta) {
  Vector g(spec.dimension());
  double s = 0.0;
  for (std::size_t i = 0; i < spec.agents(); ++i) {
    partial_gradient(spec, theta, i, g);
    s += squared_norm(g);
  }
  return std::sqrt(s);
}

// Exact minimizer when every local loss is a ModelPropagationLoss. The
// system separates into p independent n x n solves
//   (diag(D) - W + mu diag(D c)) x = mu diag(D c) anchors[:, k].
inline ModelStack solve_model_propagation_exact(const ObjectiveSpec& spec) {
  const std::size_t n = spec.agents();
  const std::size_t p = spec.dimension();
  std::vector<const ModelPropagationLoss*> mp(n);
  for (std::size_t i = 0; i < n; ++i) {
    mp[i] = dynamic_cast<const ModelPropagationLoss*>(&spec.loss(i));
    if (mp[i] == nullptr) {
      throw std::invalid_argument("closed-form solve needs model-propagation losses");
    }
  }
  if (!(spec.sigma_bound() > 0.0)) {
    throw std::domain_error("model-propagation system is singular (sigma bound is 0)");
  }
  const auto& g = spec.graph();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(n));
  Eigen::VectorXd scale(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    scale(ii) = spec.mu() * g.degree(i) * g.confidence(i);
    a(ii, ii) = g.degree(i) + scale(ii);
    for (const auto& nb : g.neighbors(i)) {
      a(ii, static_cast<Eigen::Index>(nb.index)) = -nb.weight;
    }
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) {
    throw std::domain_error("model-propagation factorization failed");
  }
  ModelStack out(n, p);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      rhs(static_cast<Eigen::Index>(i)) =
          scale(static_cast<Eigen::Index>(i)) * mp[i]->anchor()[k];
    }
    const Eigen::VectorXd x = ldlt.solve(rhs);
    for (std::size_t i = 0; i < n; ++i) {
      out.block(i)[k] = x(static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

// Builds the model-propagation objective over `anchors` on graph g.
inline ObjectiveSpec make_model_propagation_spec(
    std::shared_ptr<const NetworkGraph> graph, const std::vector<Vector>& anchors,
    double mu) {
  std::vector<LossPtr> losses;
  losses.reserve(anchors.size());
  for (const auto& a : anchors) losses.push_back(std::make_shared<ModelPropagationLoss>(a));
  return ObjectiveSpec(std::move(graph), std::move(losses), mu);
}

}  // namespace dpcd
