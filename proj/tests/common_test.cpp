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


#include "dpcd/common.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

namespace dpcd {
namespace {

TEST(VectorOps, DotNormsAndAxpy) {
  const Vector a{1.0, -2.0, 3.0};
  const Vector b{4.0, 0.5, -1.0};
  EXPECT_DOUBLE_EQ(dot(a, b), 4.0 - 1.0 - 3.0);
  EXPECT_DOUBLE_EQ(squared_norm(a), 14.0);
  EXPECT_DOUBLE_EQ(norm2(a), std::sqrt(14.0));
  EXPECT_DOUBLE_EQ(norm1(a), 6.0);
  Vector y = b;
  axpy(2.0, a, y);
  EXPECT_EQ(y, (Vector{6.0, -3.5, 5.0}));
}

TEST(Rng, Uniform01StaysInHalfOpenUnitInterval) {
  Rng rng(3);
  double sum = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // Mean 1/2, sd of the mean sqrt(1/12/n).
  EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Rng, UniformIndexCoversRangeEvenly) {
  Rng rng(11);
  const std::size_t bins = 7;
  const int n = 70000;
  std::vector<int> counts(bins, 0);
  for (int k = 0; k < n; ++k) {
    const std::size_t i = uniform_index(rng, bins);
    ASSERT_LT(i, bins);
    ++counts[i];
  }
  const double expected = static_cast<double>(n) / bins;
  const double sd = std::sqrt(n * (1.0 / bins) * (1.0 - 1.0 / bins));
  for (int c : counts) EXPECT_NEAR(c, expected, 5.0 * sd);
}

TEST(Rng, StandardNormalMoments) {
  Rng rng(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = standard_normal(rng);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) ASSERT_EQ(uniform01(a), uniform01(b));
}

TEST(Rng, DerivedSeedsDifferAcrossStreamsAndBases) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t base = 0; base < 20; ++base) {
    for (std::uint64_t stream = 0; stream < 20; ++stream) {
      seen.insert(derive_seed(base, stream));
    }
  }
  EXPECT_EQ(seen.size(), 400u);
  EXPECT_EQ(derive_seed(9, 2), derive_seed(9, 2));
}

TEST(Require, ThrowsInvalidArgumentWithMessage) {
  EXPECT_NO_THROW(detail::require(true, "unused"));
  try {
    detail::require(false, "bad thing");
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "bad thing");
  }
}

TEST(Errors, CarryPayload) {
  const ConvergenceError c("slow", 0.25);
  EXPECT_DOUBLE_EQ(c.final_gradient_norm(), 0.25);
  const ParseError p("bad token", 17);
  EXPECT_EQ(p.line(), 17u);
}

}  // namespace
}  // namespace dpcd
