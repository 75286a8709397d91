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
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dpcd/common.hpp"

namespace dpcd {

inline constexpr double kDefaultClip = 10.0;
inline constexpr double kDefaultFitTolerance = 1e-10;

// Labeled points of one agent plus its L2 regularization strength.
struct LocalDataset {
  std::vector<Vector> features;
  std::vector<double> labels;
  double lambda = 0.0;

  std::size_t size() const { return features.size(); }
  std::size_t dimension() const {
    return features.empty() ? 0 : features.front().size();
  }

  void validate() const {
    detail::require(features.size() == labels.size(),
                    "features and labels must have equal length");
    detail::require(lambda >= 0.0, "regularization must be nonnegative");
    for (const auto& x : features) {
      detail::require(x.size() == dimension(), "ragged feature rows");
    }
  }
};

struct LossConstants {
  double lipschitz_grad = 0.0;       // smoothness of the local objective
  double strong_convexity = 0.0;     // >= 0
  double point_lipschitz_l1 = 0.0;   // bound on ||grad of one point loss||_1
  std::optional<double> point_lipschitz_l2;
};

// Local objective of one agent, bound to its data.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::size_t dimension() const = 0;
  virtual double value(std::span<const double> theta) const = 0;
  virtual void gradient(std::span<const double> theta,
                        std::span<double> out) const = 0;
  virtual LossConstants constants() const = 0;
  // Number of data points behind this loss (m_i).
  virtual std::size_t sample_count() const = 0;

  Vector gradient(std::span<const double> theta) const {
    Vector g(dimension(), 0.0);
    gradient(theta, g);
    return g;
  }

  std::pair<double, Vector> evaluate(std::span<const double> theta) const {
    return {value(theta), gradient(theta)};
  }

 protected:
  void check_dimension(std::span<const double> theta) const {
    if (theta.size() != dimension()) {
      throw std::invalid_argument(detail::concat(
          "parameter dimension ", theta.size(), " != loss dimension ", dimension()));
    }
  }
};

using LossPtr = std::shared_ptr<const LossModel>;

// log(1 + exp(z)) without overflow.
inline double log1p_exp(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// (1/m) sum log(1 + exp(-y theta^T x)) + lambda ||theta||^2.
class LogisticLoss final : public LossModel {
 public:
  // `point_lipschitz_l1` is the declared L1 bound on per-point gradients;
  // it must dominate ||x||_1 over the feature domain. The optional L2 bound
  // must dominate ||x||_2 and defaults to the L1 bound.
  explicit LogisticLoss(LocalDataset data, double point_lipschitz_l1 = 1.0,
                        std::optional<double> point_lipschitz_l2 = std::nullopt)
      : data_(std::move(data)), l0_(point_lipschitz_l1) {
    data_.validate();
    if (data_.size() == 0) throw std::invalid_argument("logistic loss: empty dataset");
    detail::require(l0_ > 0.0, "point Lipschitz bound must be positive");
    for (double y : data_.labels) {
      if (y != 1.0 && y != -1.0) {
        throw std::invalid_argument("logistic loss: labels must be -1 or +1");
      }
    }
    double mean_sq = 0.0;
    for (const auto& x : data_.features) mean_sq += squared_norm(x);
    mean_sq /= static_cast<double>(data_.size());
    // Hessian of the data term is (1/m) sum s(1-s) x x^T <= (1/4m) sum x x^T,
    // whose spectral norm is at most its trace.
    constants_.lipschitz_grad = 0.25 * mean_sq + 2.0 * data_.lambda;
    constants_.strong_convexity = 2.0 * data_.lambda;
    constants_.point_lipschitz_l1 = l0_;
    // ||g||_2 <= ||g||_1, so the L1 bound also holds in L2.
    constants_.point_lipschitz_l2 = std::min(l0_, point_lipschitz_l2.value_or(l0_));
    detail::require(*constants_.point_lipschitz_l2 > 0.0, "L2 bound must be positive");
  }

  std::size_t dimension() const override { return data_.dimension(); }
  std::size_t sample_count() const override { return data_.size(); }
  const LocalDataset& data() const { return data_; }

  double value(std::span<const double> theta) const override {
    check_dimension(theta);
    double s = 0.0;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      s += log1p_exp(-data_.labels[k] * dot(theta, data_.features[k]));
    }
    return s / static_cast<double>(data_.size()) + data_.lambda * squared_norm(theta);
  }

  using LossModel::gradient;
  void gradient(std::span<const double> theta, std::span<double> out) const override {
    check_dimension(theta);
    std::fill(out.begin(), out.end(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(data_.size());
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const double y = data_.labels[k];
      const double coef = -y * sigmoid(-y * dot(theta, data_.features[k]));
      axpy(coef * inv_m, data_.features[k], out);
    }
    axpy(2.0 * data_.lambda, theta, out);
  }

  // Gradient of the unregularized loss at a single point.
  static Vector point_gradient(std::span<const double> theta,
                               std::span<const double> x, double y) {
    Vector g(x.begin(), x.end());
    const double coef = -y * sigmoid(-y * dot(theta, x));
    for (double& v : g) v *= coef;
    return g;
  }

  LossConstants constants() const override { return constants_; }

 private:
  LocalDataset data_;
  double l0_;
  LossConstants constants_;
};

// Squared-error loss whose per-point gradients 2(theta^T phi - r) phi are
// projected onto the L1 ball of radius `clip`. The value is the matching
// Huber-type function so that gradient() is its exact derivative.
class ClippedQuadraticLoss final : public LossModel {
 public:
  ClippedQuadraticLoss(LocalDataset data, double clip = kDefaultClip)
      : data_(std::move(data)), clip_(clip) {
    data_.validate();
    if (data_.size() == 0) throw std::invalid_argument("quadratic loss: empty dataset");
    detail::require(clip_ > 0.0, "clip must be positive");
    double mean_sq = 0.0;
    for (const auto& x : data_.features) mean_sq += squared_norm(x);
    mean_sq /= static_cast<double>(data_.size());
    constants_.lipschitz_grad = 2.0 * mean_sq + 2.0 * data_.lambda;
    // Clipped regions have no curvature from the data term.
    constants_.strong_convexity = 2.0 * data_.lambda;
    constants_.point_lipschitz_l1 = clip_;
    constants_.point_lipschitz_l2 = clip_;
  }

  std::size_t dimension() const override { return data_.dimension(); }
  std::size_t sample_count() const override { return data_.size(); }
  double clip() const { return clip_; }
  const LocalDataset& data() const { return data_; }

  double value(std::span<const double> theta) const override {
    check_dimension(theta);
    double s = 0.0;
    for (std::size_t k = 0; k < data_.size(); ++k) {
      const double r = dot(theta, data_.features[k]) - data_.labels[k];
      const double a = norm1(data_.features[k]);
      // Gradient norm is 2|r|a; beyond |r| = clip/(2a) the loss turns linear.
      const double knee = a > 0.0 ? clip_ / (2.0 * a) : 0.0;
      if (a == 0.0 || std::abs(r) <= knee) {
        s += r * r;
      } else {
        s += clip_ / a * std::abs(r) - knee * knee;
      }
    }
    return s / static_cast<double>(data_.size()) + data_.lambda * squared_norm(theta);
  }

  using LossModel::gradient;
  void gradient(std::span<const double> theta, std::span<double> out) const override {
    check_dimension(theta);
    std::fill(out.begin(), out.end(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(data_.size());
    for (std::size_t k = 0; k < data_.size(); ++k) {
      axpy(inv_m * point_coefficient(theta, k), data_.features[k], out);
    }
    axpy(2.0 * data_.lambda, theta, out);
  }

  Vector point_gradient(std::span<const double> theta, std::size_t k) const {
    Vector g(data_.features[k]);
    const double coef = point_coefficient(theta, k);
    for (double& v : g) v *= coef;
    return g;
  }

  LossConstants constants() const override { return constants_; }

 private:
  double point_coefficient(std::span<const double> theta, std::size_t k) const {
    const auto& phi = data_.features[k];
    const double raw = 2.0 * (dot(theta, phi) - data_.labels[k]);
    const double l1 = std::abs(raw) * norm1(phi);
    return l1 > clip_ ? raw * (clip_ / l1) : raw;
  }

  LocalDataset data_;
  double clip_;
  LossConstants constants_;
};

// 0.5 ||theta - anchor||^2, used to smooth pre-trained local models.
class ModelPropagationLoss final : public LossModel {
 public:
  explicit ModelPropagationLoss(Vector anchor, std::size_t sample_count = 0)
      : anchor_(std::move(anchor)), sample_count_(sample_count) {
    detail::require(!anchor_.empty(), "anchor must be nonempty");
  }

  std::size_t dimension() const override { return anchor_.size(); }
  std::size_t sample_count() const override { return sample_count_; }
  const Vector& anchor() const { return anchor_; }

  double value(std::span<const double> theta) const override {
    check_dimension(theta);
    double s = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double d = theta[k] - anchor_[k];
      s += d * d;
    }
    return 0.5 * s;
  }

  using LossModel::gradient;
  void gradient(std::span<const double> theta, std::span<double> out) const override {
    check_dimension(theta);
    for (std::size_t k = 0; k < theta.size(); ++k) out[k] = theta[k] - anchor_[k];
  }

  LossConstants constants() const override {
    return {.lipschitz_grad = 1.0, .strong_convexity = 1.0,
            .point_lipschitz_l1 = 0.0, .point_lipschitz_l2 = std::nullopt};
  }

 private:
  Vector anchor_;
  std::size_t sample_count_;
};

// Gradient descent with Armijo backtracking from the zero vector until
// ||grad|| <= tol. The trial step grows after each accepted step.
inline Vector fit_local_model(const LossModel& loss, double tol = kDefaultFitTolerance,
                              std::size_t max_iterations = 200000) {
  detail::require(tol > 0.0, "tolerance must be positive");
  const std::size_t p = loss.dimension();
  Vector theta(p, 0.0), grad(p), trial(p);
  loss.gradient(theta, grad);
  double f = loss.value(theta);
  const double lip = loss.constants().lipschitz_grad;
  double step = lip > 0.0 ? 1.0 / lip : 1.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const double gnorm2 = squared_norm(grad);
    if (std::sqrt(gnorm2) <= tol) return theta;
    // 1/L always satisfies the sufficient-decrease test, so backtracking
    // stops there; this also sidesteps rounding in f near the optimum.
    const double min_step = lip > 0.0 ? 1.0 / lip : 1e-12;
    step *= 2.0;
    while (step > min_step) {
      for (std::size_t k = 0; k < p; ++k) trial[k] = theta[k] - step * grad[k];
      if (loss.value(trial) <= f - 0.5 * step * gnorm2) break;
      step *= 0.5;
    }
    step = std::max(step, min_step);
    for (std::size_t k = 0; k < p; ++k) theta[k] -= step * grad[k];
    f = loss.value(theta);
    loss.gradient(theta, grad);
  }
  const double final_norm = norm2(grad);
  if (final_norm <= tol) return theta;
  throw ConvergenceError(
      detail::concat("fit_local_model: no convergence, gradient norm ", final_norm),
      final_norm);
}

}  // namespace dpcd
