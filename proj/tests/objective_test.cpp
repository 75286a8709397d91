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


#include "dpcd/objective.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

namespace dpcd {
namespace {

std::shared_ptr<const NetworkGraph> random_graph(Rng& rng, std::size_t n) {
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    w[i * n + i + 1] = w[(i + 1) * n + i] = 0.1 + uniform01(rng);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (uniform01(rng) < 0.5) w[i * n + j] = w[j * n + i] = uniform01(rng);
    }
  }
  std::vector<double> c(n);
  for (auto& v : c) v = 0.1 + 0.9 * uniform01(rng);
  return std::make_shared<const NetworkGraph>(n, w, c);
}

LocalDataset random_dataset(Rng& rng, std::size_t m, std::size_t p) {
  LocalDataset d;
  d.lambda = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    Vector x(p);
    for (auto& v : x) v = 2.0 * uniform01(rng) - 1.0;
    d.features.push_back(x);
    d.labels.push_back(uniform01(rng) < 0.5 ? -1.0 : 1.0);
  }
  return d;
}

ObjectiveSpec random_logistic_spec(Rng& rng, std::size_t n, std::size_t p, double mu) {
  std::vector<LossPtr> losses;
  for (std::size_t i = 0; i < n; ++i) {
    losses.push_back(std::make_shared<LogisticLoss>(random_dataset(rng, 3 + i, p)));
  }
  return ObjectiveSpec(random_graph(rng, n), losses, mu);
}

ModelStack random_stack(Rng& rng, std::size_t n, std::size_t p) {
  ModelStack s(n, p);
  for (auto& v : s.flat()) v = standard_normal(rng);
  return s;
}

// Literal re-implementation of the objective, both loops over all pairs.
double naive_objective(const ObjectiveSpec& spec, const ModelStack& theta) {
  const auto& g = spec.graph();
  const std::size_t n = spec.agents();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i >= j) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < spec.dimension(); ++k) {
        const double d = theta.block(i)[k] - theta.block(j)[k];
        d2 += d * d;
      }
      s += 0.5 * g.weight(i, j) * d2;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    s += spec.mu() * g.degree(i) * g.confidence(i) * spec.loss(i).value(theta.block(i));
  }
  return s;
}

TEST(ModelStack, BlocksRoundTrip) {
  Rng rng(1);
  std::vector<Vector> blocks(4, Vector(3));
  for (auto& b : blocks) {
    for (auto& v : b) v = standard_normal(rng);
  }
  const ModelStack s = ModelStack::from_blocks(blocks);
  EXPECT_EQ(s.flat().size(), 12u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.block_copy(i), blocks[i]);
  EXPECT_THROW(s.block(4), std::out_of_range);
  EXPECT_THROW(ModelStack(2, 2, std::vector<double>(3)), std::invalid_argument);
}

TEST(ModelStack, CsvRoundTripIsExact) {
  Rng rng(2);
  const ModelStack s = random_stack(rng, 5, 3);
  std::stringstream ss;
  write_model_csv(ss, s);
  EXPECT_EQ(read_model_csv(ss), s);
}

TEST(ObjectiveSpec, CachedConstants) {
  Rng rng(3);
  const ObjectiveSpec spec = random_logistic_spec(rng, 5, 3, 0.7);
  const auto& g = spec.graph();
  double sigma = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto c = spec.local_constants(i);
    EXPECT_DOUBLE_EQ(spec.block_lipschitz(i),
                     g.degree(i) * (1.0 + 0.7 * g.confidence(i) * c.lipschitz_grad));
    sigma = std::min(sigma, 0.7 * g.degree(i) * g.confidence(i) * c.strong_convexity);
  }
  EXPECT_DOUBLE_EQ(spec.sigma_bound(), sigma);
  EXPECT_GT(spec.sigma_bound(), 0.0);
  EXPECT_DOUBLE_EQ(spec.l_min(), *std::min_element(spec.block_lipschitz().begin(),
                                                   spec.block_lipschitz().end()));
  EXPECT_DOUBLE_EQ(spec.l_max(), *std::max_element(spec.block_lipschitz().begin(),
                                                   spec.block_lipschitz().end()));
}

TEST(ObjectiveValue, ZeroAtConsensusOnAnchors) {
  auto g = std::make_shared<const NetworkGraph>(3, std::vector<double>{0, 1, 1, 1, 0, 1, 1, 1, 0});
  const Vector a{0.5, -1.0};
  const ObjectiveSpec spec = make_model_propagation_spec(g, {a, a, a}, 1.0);
  EXPECT_EQ(objective_value(spec, ModelStack::from_blocks({a, a, a})), 0.0);
}

TEST(ObjectiveValue, SinglePairSmoothnessTerm) {
  auto g = std::make_shared<const NetworkGraph>(2, std::vector<double>{0, 1, 1, 0});
  const Vector a1{1.0, 0.0}, a2{0.0, 0.0};
  const ObjectiveSpec spec = make_model_propagation_spec(g, {a1, a2}, 1.0);
  EXPECT_DOUBLE_EQ(objective_value(spec, ModelStack::from_blocks({a1, a2})), 0.5);
}

TEST(ObjectiveValue, MatchesNaiveDoubleLoop) {
  Rng rng(4);
  for (std::size_t n = 2; n <= 6; ++n) {
    const ObjectiveSpec spec = random_logistic_spec(rng, n, 2, 0.3 + uniform01(rng));
    for (int trial = 0; trial < 10; ++trial) {
      const ModelStack theta = random_stack(rng, n, 2);
      const double expect = naive_objective(spec, theta);
      EXPECT_NEAR(objective_value(spec, theta), expect, 1e-12 * std::abs(expect));
    }
  }
}

TEST(ObjectiveValue, DimensionMismatchIsAFault) {
  Rng rng(5);
  const ObjectiveSpec spec = random_logistic_spec(rng, 3, 2, 1.0);
  EXPECT_THROW(objective_value(spec, ModelStack(3, 3)), std::invalid_argument);
  EXPECT_THROW(objective_value(spec, ModelStack(4, 2)), std::invalid_argument);
}

TEST(PartialGradient, IsolatedSingleAgentIsZero) {
  auto g = std::make_shared<const NetworkGraph>(1, std::vector<double>{0.0});
  const ObjectiveSpec spec = make_model_propagation_spec(g, {Vector{1.0, 2.0}}, 1.0);
  const ModelStack theta = ModelStack::from_blocks({Vector{5.0, -3.0}});
  EXPECT_EQ(partial_gradient(spec, theta, 0), (Vector{0.0, 0.0}));
  EXPECT_EQ(full_gradient_norm(spec, theta), 0.0);
  EXPECT_EQ(spec.isolated_agents(), (std::vector<std::size_t>{0}));
}

TEST(PartialGradient, TwoAgentHandSubstitution) {
  auto g = std::make_shared<const NetworkGraph>(2, std::vector<double>{0, 1, 1, 0});
  const ObjectiveSpec spec =
      make_model_propagation_spec(g, {Vector{1.0, 0.0}, Vector{0.0, 0.0}}, 1.0);
  const ModelStack zero(2, 2);
  EXPECT_EQ(partial_gradient(spec, zero, 0), (Vector{-1.0, 0.0}));
}

TEST(PartialGradient, MatchesFiniteDifferencesOfObjective) {
  Rng rng(6);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 2 + uniform_index(rng, 4), p = 1 + uniform_index(rng, 4);
    const ObjectiveSpec spec = random_logistic_spec(rng, n, p, 0.2 + uniform01(rng));
    const ModelStack theta = random_stack(rng, n, p);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector g = partial_gradient(spec, theta, i);
      for (std::size_t k = 0; k < p; ++k) {
        ModelStack a = theta, b = theta;
        const double h = 1e-6;
        a.block(i)[k] += h;
        b.block(i)[k] -= h;
        const double fd = (objective_value(spec, a) - objective_value(spec, b)) / (2.0 * h);
        EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(FullGradientNorm, RootSumSquareOfBlocks) {
  Rng rng(7);
  const ObjectiveSpec spec = random_logistic_spec(rng, 4, 3, 0.5);
  const ModelStack theta = random_stack(rng, 4, 3);
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += squared_norm(partial_gradient(spec, theta, i));
  EXPECT_DOUBLE_EQ(full_gradient_norm(spec, theta), std::sqrt(s));
}

TEST(ExactSolve, IdenticalAnchorsGiveConsensus) {
  Rng rng(8);
  const Vector a{0.3, -0.4, 2.0};
  const ObjectiveSpec spec = make_model_propagation_spec(random_graph(rng, 5), {a, a, a, a, a}, 0.5);
  const ModelStack x = solve_model_propagation_exact(spec);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(x.block(i)[k], a[k], 1e-12);
  }
}

TEST(ExactSolve, TwoByTwoByHand) {
  auto g = std::make_shared<const NetworkGraph>(2, std::vector<double>{0, 1, 1, 0});
  const ObjectiveSpec spec = make_model_propagation_spec(g, {Vector{0.0}, Vector{1.0}}, 1.0);
  const ModelStack x = solve_model_propagation_exact(spec);
  EXPECT_NEAR(x.block(0)[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(x.block(1)[0], 2.0 / 3.0, 1e-15);
}

TEST(ExactSolve, ResidualIsTiny) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vector> anchors(5, Vector(3));
    for (auto& a : anchors) {
      for (auto& v : a) v = standard_normal(rng);
    }
    const ObjectiveSpec spec = make_model_propagation_spec(random_graph(rng, 5), anchors, 0.3);
    const ModelStack x = solve_model_propagation_exact(spec);
    EXPECT_LE(full_gradient_norm(spec, x), 1e-8 * (1.0 + norm2(x.flat())));
  }
}

TEST(ExactSolve, RejectsNonQuadraticAndSingular) {
  Rng rng(10);
  EXPECT_THROW(solve_model_propagation_exact(random_logistic_spec(rng, 3, 2, 1.0)),
               std::invalid_argument);
  auto g = std::make_shared<const NetworkGraph>(1, std::vector<double>{0.0});
  EXPECT_THROW(solve_model_propagation_exact(make_model_propagation_spec(g, {Vector{1.0}}, 1.0)),
               std::domain_error);
}

TEST(ObjectiveProperties, BlockDescentLemma) {
  Rng rng(11);
  const ObjectiveSpec spec = random_logistic_spec(rng, 5, 3, 0.8);
  for (int trial = 0; trial < 200; ++trial) {
    const ModelStack theta = random_stack(rng, 5, 3);
    const std::size_t i = uniform_index(rng, 5);
    Vector d(3);
    for (auto& v : d) v = standard_normal(rng);
    ModelStack moved = theta;
    axpy(1.0, d, moved.block(i));
    const double bound = objective_value(spec, theta) + dot(d, partial_gradient(spec, theta, i)) +
                         0.5 * spec.block_lipschitz(i) * squared_norm(d);
    EXPECT_LE(objective_value(spec, moved), bound + 1e-10);
  }
}

TEST(ObjectiveProperties, StrongConvexityBound) {
  Rng rng(12);
  const ObjectiveSpec spec = random_logistic_spec(rng, 5, 3, 0.8);
  for (int trial = 0; trial < 200; ++trial) {
    const ModelStack a = random_stack(rng, 5, 3), b = random_stack(rng, 5, 3);
    double lin = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const Vector g = partial_gradient(spec, a, i);
      for (std::size_t k = 0; k < 3; ++k) {
        const double diff = b.block(i)[k] - a.block(i)[k];
        lin += g[k] * diff;
        sq += diff * diff;
      }
    }
    EXPECT_GE(objective_value(spec, b),
              objective_value(spec, a) + lin + 0.5 * spec.sigma_bound() * sq - 1e-10);
  }
}

}  // namespace
}  // namespace dpcd
