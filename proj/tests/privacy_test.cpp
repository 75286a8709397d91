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


#include "dpcd/privacy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

namespace dpcd {
namespace {

// The three composition expressions written out independently in double.
double oracle_composed(const std::vector<double>& eps, double delta) {
  double naive = 0.0, shrink = 0.0, sq = 0.0;
  for (double e : eps) {
    naive += e;
    shrink += (std::exp(e) - 1.0) * e / (std::exp(e) + 1.0);
    sq += e * e;
  }
  if (delta == 0.0) return naive;
  const double a = shrink + std::sqrt(2.0 * sq * std::log(std::exp(1.0) + std::sqrt(sq) / delta));
  const double b = shrink + std::sqrt(2.0 * sq * std::log(1.0 / delta));
  return std::min({naive, a, b});
}

TEST(NoiseScale, LaplaceExamples) {
  EXPECT_DOUBLE_EQ(noise_scale_laplace(1.0, 0.1, 20), 1.0);
  EXPECT_DOUBLE_EQ(noise_scale_laplace(1.0, 1.0, 1), 2.0);
  EXPECT_DOUBLE_EQ(noise_scale_laplace(0.7, 0.3, 9), 2.0 * noise_scale_laplace(0.7, 0.3, 18));
  EXPECT_THROW(noise_scale_laplace(1.0, 0.0, 5), std::invalid_argument);
  EXPECT_THROW(noise_scale_laplace(1.0, -1.0, 5), std::invalid_argument);
  EXPECT_THROW(noise_scale_laplace(1.0, 1.0, 0), std::invalid_argument);
}

TEST(NoiseScale, GaussianExamples) {
  EXPECT_NEAR(noise_scale_gaussian(1.0, 1.0, 2.0 * std::exp(-5.0)), 2.0 * std::sqrt(10.0), 1e-12);
  EXPECT_THROW(noise_scale_gaussian(1.0, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(noise_scale_gaussian(1.0, 1.0, 2.0), std::invalid_argument);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.1, 0.5, 1.0, 3.0}) {
    const double s = noise_scale_gaussian(1.0, eps, 1e-3);
    EXPECT_LT(s, prev);
    prev = s;
  }
  prev = std::numeric_limits<double>::infinity();
  for (double d : {1e-8, 1e-4, 1e-2, 0.5}) {
    const double s = noise_scale_gaussian(1.0, 1.0, d);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(SampleNoise, ZeroScaleIsExactlyZero) {
  Rng rng(1);
  EXPECT_EQ(sample_noise(0.0, 5, rng), Vector(5, 0.0));
  EXPECT_EQ(sample_noise(0.0, 5, rng, NoiseMechanism::kGaussian), Vector(5, 0.0));
  EXPECT_THROW(sample_noise(-1.0, 5, rng), std::invalid_argument);
}

TEST(SampleNoise, LaplaceMoments) {
  Rng rng(2);
  const double s = 1.7;
  const std::size_t n = 1000000;
  const Vector x = sample_noise(s, n, rng);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_NEAR(var, 2.0 * s * s, 0.05 * 2.0 * s * s);
  EXPECT_LE(std::abs(mean), 5.0 * std::sqrt(2.0 * s * s / n));
}

TEST(SampleNoise, GaussianMoments) {
  Rng rng(3);
  const double s = 0.4;
  const std::size_t n = 1000000;
  const Vector x = sample_noise(s, n, rng, NoiseMechanism::kGaussian);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_NEAR(var, s * s, 0.05 * s * s);
  EXPECT_LE(std::abs(mean), 5.0 * s / std::sqrt(n));
}

TEST(ComposedEpsilon, Examples) {
  const std::vector<double> none;
  EXPECT_EQ(composed_epsilon(none, 0.1), 0.0);
  for (double d : {0.0, 1e-6, std::exp(-5.0), 0.5}) {
    const std::vector<double> one{0.3};
    EXPECT_DOUBLE_EQ(composed_epsilon(one, d), 0.3);
  }
  const std::vector<double> ten(10, 0.2);
  EXPECT_NEAR(composed_epsilon(ten, 0.0), 2.0, 1e-12);
  const std::vector<double> many(50, 0.01);
  EXPECT_LT(composed_epsilon(many, std::exp(-5.0)), 0.5);
  const std::vector<double> bad{0.1, -0.1};
  EXPECT_THROW(composed_epsilon(bad, 0.1), std::invalid_argument);
}

TEST(ComposedEpsilon, MatchesIndependentOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> eps(1 + uniform_index(rng, 200));
    for (auto& e : eps) e = 0.001 + 0.5 * uniform01(rng);
    const double delta = trial % 5 == 0 ? 0.0 : std::exp(-10.0 * uniform01(rng));
    const double expect = oracle_composed(eps, delta);
    EXPECT_NEAR(composed_epsilon(eps, delta), expect, 1e-12 * expect);
  }
}

TEST(ComposedEpsilon, BoundedByNaiveAndMonotone) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const double delta = std::exp(-8.0 * uniform01(rng));
    std::vector<double> eps;
    double prev = 0.0;
    for (int k = 0; k < 60; ++k) {
      eps.push_back(0.001 + uniform01(rng));
      const double c = composed_epsilon(eps, delta);
      EXPECT_LE(c, std::accumulate(eps.begin(), eps.end(), 0.0) * (1.0 + 1e-15));
      EXPECT_GE(c, prev);
      prev = c;
    }
  }
}

TEST(AllocateUniform, Examples) {
  for (std::size_t t : {1u, 3u, 20u}) {
    const auto a = allocate_uniform(0.5, t, 0.0);
    ASSERT_EQ(a.size(), t);
    for (double e : a) EXPECT_DOUBLE_EQ(e, 0.5 / static_cast<double>(t));
  }
  EXPECT_DOUBLE_EQ(allocate_uniform(0.7, 1, std::exp(-5.0))[0], 0.7);
  const auto a = allocate_uniform(0.5, 20, std::exp(-5.0));
  EXPECT_NEAR(composed_epsilon(a, std::exp(-5.0)), 0.5, 1e-9);
  EXPECT_GE(a[0], 0.5 / 20.0);
  for (double e : a) EXPECT_EQ(e, a[0]);
  EXPECT_THROW(allocate_uniform(0.0, 5, 0.1), std::invalid_argument);
  EXPECT_THROW(allocate_uniform(1.0, 0, 0.1), std::invalid_argument);
}

TEST(AllocateUniform, RoundTripsThroughComposition) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const double budget = 0.05 + 5.0 * uniform01(rng);
    const std::size_t t = 1 + uniform_index(rng, 500);
    const double delta = trial % 4 == 0 ? 0.0 : std::exp(-10.0 * uniform01(rng));
    EXPECT_NEAR(composed_epsilon(allocate_uniform(budget, t, delta), delta), budget, 1e-9);
  }
}

TEST(AllocateOptimal, FullScheduleSumsToBudget) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + uniform_index(rng, 300);
    const double c = 0.01 + 0.98 * uniform01(rng);
    std::vector<std::size_t> all(T);
    std::iota(all.begin(), all.end(), 0);
    const auto a = allocate_optimal(0.8, T, c, all);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.8, 1e-12);
    // Geometric series: the normalizer over the full schedule is exactly 1.
    const double k = (std::cbrt(c) - 1.0) / (std::pow(c, T / 3.0) - 1.0);
    EXPECT_NEAR(a[0], k * 0.8, 1e-12);
  }
}

TEST(AllocateOptimal, SupportRatioAndDirection) {
  Rng rng(8);
  const double c = 0.9;
  std::vector<std::size_t> ticks{2, 5, 6, 11, 30};
  const auto a = allocate_optimal(1.3, 40, c, ticks);
  ASSERT_EQ(a.size(), 40u);
  double sum = 0.0;
  for (std::size_t t = 0; t < 40; ++t) {
    const bool in = std::find(ticks.begin(), ticks.end(), t) != ticks.end();
    EXPECT_EQ(a[t] > 0.0, in);
    sum += a[t];
  }
  EXPECT_NEAR(sum, 1.3, 1e-12);
  for (std::size_t k = 1; k < ticks.size(); ++k) {
    EXPECT_LT(a[ticks[k]], a[ticks[k - 1]]);
    EXPECT_NEAR(a[ticks[k]] / a[ticks[k - 1]],
                std::pow(c, (double)(ticks[k] - ticks[k - 1]) / 3.0), 1e-12);
  }
}

TEST(AllocateOptimal, NearOneLimitIsUniform) {
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), 0);
  const auto a = allocate_optimal(2.0, 50, 1.0 - 1e-6, all);
  for (double e : a) EXPECT_NEAR(e, 2.0 / 50.0, 1e-4 * 2.0 / 50.0);
}

TEST(AllocateOptimal, Faults) {
  const std::vector<std::size_t> t{0, 1};
  const std::vector<std::size_t> none;
  EXPECT_THROW(allocate_optimal(1.0, 5, 0.0, t), std::invalid_argument);
  EXPECT_THROW(allocate_optimal(1.0, 5, 1.0, t), std::invalid_argument);
  EXPECT_THROW(allocate_optimal(1.0, 5, 0.5, none), std::invalid_argument);
  const std::vector<std::size_t> out{7};
  EXPECT_THROW(allocate_optimal(1.0, 5, 0.5, out), std::invalid_argument);
}

TEST(AllocateOptimal, NoiseTermNoWorseThanUniform) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 2 + uniform_index(rng, 200);
    const double c = 0.5 + 0.4999 * uniform01(rng);
    std::vector<std::size_t> all(T);
    std::iota(all.begin(), all.end(), 0);
    const auto opt = allocate_optimal(1.0, T, c, all);
    const std::vector<double> uni(T, 1.0 / static_cast<double>(T));
    EXPECT_LE(allocation_noise_term(c, opt), allocation_noise_term(c, uni) * (1.0 + 1e-12));
  }
}

TEST(LocalDp, InfiniteEpsilonIsIdentity) {
  Rng rng(10);
  LocalDataset d;
  d.features = {{0.1, -0.2}, {0.5, 0.5}};
  d.labels = {1.0, -1.0};
  const std::vector<FeatureBound> b{{-1.0, 1.0}, {-1.0, 1.0}};
  const auto out = perturb_dataset_local_dp(d, std::numeric_limits<double>::infinity(), b, rng);
  EXPECT_EQ(out.features, d.features);
  EXPECT_EQ(out.labels, d.labels);
}

TEST(LocalDp, UnitRangeTwoDimsHasScaleTwo) {
  Rng rng(11);
  LocalDataset d;
  for (int k = 0; k < 200000; ++k) {
    d.features.push_back({0.5, 0.5});
    d.labels.push_back(1.0);
  }
  const std::vector<FeatureBound> b{{0.0, 1.0}, {0.0, 1.0}};
  const auto out = perturb_dataset_local_dp(d, 1.0, b, rng);
  double abs_dev = 0.0;
  for (const auto& x : out.features) abs_dev += std::abs(x[0] - 0.5) + std::abs(x[1] - 0.5);
  // E|Laplace(0, s)| = s.
  EXPECT_NEAR(abs_dev / (2.0 * d.size()), 2.0, 0.02);
  EXPECT_EQ(out.labels, d.labels);
}

TEST(LocalDp, OutOfBoundsFeatureIsAFault) {
  Rng rng(12);
  LocalDataset d;
  d.features = {{2.0}};
  d.labels = {1.0};
  const std::vector<FeatureBound> b{{-1.0, 1.0}};
  EXPECT_THROW(perturb_dataset_local_dp(d, 1.0, b, rng), std::invalid_argument);
  EXPECT_THROW(perturb_dataset_local_dp(d, 0.0, b, rng), std::invalid_argument);
}

TEST(Ledger, FollowsPlanAndStops) {
  const double delta = std::exp(-5.0);
  PrivacyLedger led(0.5, delta, allocate_uniform(0.5, 4, delta));
  EXPECT_EQ(led.remaining(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    ASSERT_TRUE(led.next_allocation().has_value());
    led.record(t * 3, 1.0);
  }
  EXPECT_TRUE(led.exhausted());
  EXPECT_FALSE(led.next_allocation().has_value());
  EXPECT_THROW(led.record(20, 1.0), std::logic_error);
  EXPECT_LE(led.composed_spent(), 0.5 + 1e-9);
  EXPECT_LE(led.composed_spent(), led.naive_spent());
  EXPECT_EQ(led.spent().back().tick, 9u);
  EXPECT_DOUBLE_EQ(led.delta_spent(), delta);
}

TEST(Ledger, GaussianDeltaComposition) {
  const std::vector<double> eps(5, 0.1), deltas(5, 0.01);
  PrivacyLedger led(1.0, 0.0, eps, NoiseMechanism::kGaussian, deltas);
  for (std::size_t t = 0; t < 5; ++t) led.record(t, 0.5);
  EXPECT_NEAR(led.delta_spent(), 1.0 - std::pow(0.99, 5), 1e-15);
  EXPECT_THROW(PrivacyLedger(1.0, 0.0, eps, NoiseMechanism::kGaussian), std::invalid_argument);
}

TEST(Ledger, CsvHasOneRowPerSpentEntry) {
  PrivacyLedger a(1.0, 0.0, {0.5, 0.5}), b(1.0, 0.0, {1.0});
  a.record(0, 2.0);
  a.record(4, 2.0);
  b.record(1, 3.0);
  std::ostringstream os;
  write_ledger_csv(os, {a, b});
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
  EXPECT_EQ(s.substr(0, s.find('\n')),
            "agent,tick,epsilon_spent,noise_scale,cumulative_naive,cumulative_composed");
  EXPECT_NE(s.find("\n1,1,1,3,1,1\n"), std::string::npos);
}

}  // namespace
}  // namespace dpcd
