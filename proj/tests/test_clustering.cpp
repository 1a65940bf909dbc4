// Copyright 2026 the qinco-cpp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <limits>

#include "qinco/clustering.hpp"
#include "test_util.hpp"

namespace {

using namespace qinco;
using qinco::testing::random_matrix;

Matrix<float> column(std::vector<float> v) {
  const std::size_t n = v.size();
  return Matrix<float>(n, 1, std::move(v));
}

// Best 2-partition of 1-D points by enumerating every assignment.
double best_two_partition_sse(const std::vector<double>& x) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = x.size();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    double s[2] = {0, 0}, c[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      s[g] += x[i];
      c[g] += 1;
    }
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      const double d = x[i] - s[g] / c[g];
      sse += d * d;
    }
    best = std::min(best, sse);
  }
  return best;
}

TEST(Kmeans, FourPointsTwoClusters) {
  const double optimum = best_two_partition_sse({0, 1, 8, 9}) / 4.0;
  EXPECT_DOUBLE_EQ(optimum, 0.25);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto res = kmeans(column({0, 1, 8, 9}), 2, rng, {10});
    std::vector<float> c = {res.centroids(0, 0), res.centroids(1, 0)};
    std::sort(c.begin(), c.end());
    EXPECT_FLOAT_EQ(c[0], 0.5f);
    EXPECT_FLOAT_EQ(c[1], 8.5f);
    EXPECT_DOUBLE_EQ(res.mse, optimum);
  }
}

TEST(Kmeans, KEqualsNGivesZeroError) {
  Rng rng(1);
  const auto data = random_matrix<float>(12, 3, rng);
  const auto res = kmeans(data, 12, rng);
  EXPECT_EQ(res.mse, 0.0);
}

TEST(Kmeans, SingleClusterIsColumnMean) {
  Rng rng(2);
  const auto data = random_matrix<double>(50, 4, rng);
  const auto res = kmeans(data, 1, rng);
  for (std::size_t d = 0; d < 4; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < 50; ++i) mean += data(i, d);
    EXPECT_NEAR(res.centroids(0, d), mean / 50, 1e-12);
  }
}

TEST(Kmeans, ErrorIsNonIncreasingAndClustersStayLive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto data = random_matrix<float>(400, 5, rng);
    const auto res = kmeans(data, 32, rng, {15});
    for (std::size_t i = 1; i < res.mse_history.size(); ++i) {
      EXPECT_LE(res.mse_history[i], res.mse_history[i - 1] * (1 + 1e-9));
    }
    std::vector<int> used(32, 0);
    for (auto a : res.assignments) {
      ASSERT_LT(a, 32u);
      used[a] = 1;
    }
    EXPECT_GT(std::count(used.begin(), used.end(), 1), 28);
    EXPECT_TRUE(res.centroids.all_finite());
  }
}

TEST(Kmeans, EmptyClustersAreRepaired) {
  // Duplicated points force empty clusters after the first assignment.
  std::vector<float> v;
  for (int i = 0; i < 20; ++i) v.push_back(0.0f);
  for (int i = 0; i < 20; ++i) v.push_back(static_cast<float>(10 + i));
  Rng rng(3);
  const auto res = kmeans(column(v), 8, rng, {20});
  EXPECT_TRUE(res.centroids.all_finite());
  EXPECT_LT(res.mse, 5.0);
}

TEST(Kmeans, DeterministicForSeed) {
  Rng a(7), b(7), data_rng(1);
  const auto data = random_matrix<float>(300, 4, data_rng);
  const auto ra = kmeans(data, 10, a);
  const auto rb = kmeans(data, 10, b);
  EXPECT_EQ(ra.centroids, rb.centroids);
  EXPECT_EQ(ra.assignments, rb.assignments);
}

TEST(Kmeans, InvalidInputsThrow) {
  Rng rng(0);
  EXPECT_THROW(kmeans(column({1, 2}), 3, rng), std::invalid_argument);
  EXPECT_THROW(kmeans(column({1, 2}), 0, rng), std::invalid_argument);
  EXPECT_THROW(kmeans(column({1, 2}), 1, rng, {0}), std::invalid_argument);
  EXPECT_THROW(kmeans(column({1, std::numeric_limits<float>::quiet_NaN()}), 1, rng), std::invalid_argument);
}

TEST(Rq, SingleStepEqualsKmeans) {
  Rng data_rng(4);
  const auto data = random_matrix<float>(200, 3, data_rng);
  Rng a(9), b(9);
  const auto rq = rq_train(data, 1, 8, a);
  const auto km = kmeans(data, 8, b);
  EXPECT_EQ(rq.model.codebooks[0], km.centroids);
  EXPECT_NEAR(rq.step_mse[0], km.mse, 1e-9);
}

TEST(Rq, ExactTwoLevelStructureIsRecovered) {
  // All sums of {0, 4} and {-1, 1}. Lloyd can stall in the tie-split
  // {-1, 1, 3} / {5}; whenever step 1 finds {0, 4}, step 2 is exact.
  const auto data = column({-1, 1, 3, 5});
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto rq = rq_train(data, 2, 2, rng);
    if (rq.step_mse[0] == 1.0) {
      EXPECT_EQ(rq.step_mse[1], 0.0);
      ++exact;
    }
  }
  EXPECT_GT(exact, 0);
}

TEST(Rq, PerStepErrorIsNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto data = random_matrix<float>(500, 6, rng);
    const auto rq = rq_train(data, 5, 8, rng);
    for (std::size_t m = 1; m < rq.step_mse.size(); ++m) EXPECT_LE(rq.step_mse[m], rq.step_mse[m - 1]);
  }
}

TEST(RqEncode, ExactCentroidHit) {
  Rng rng(5);
  RqModel<float> rq;
  rq.codebooks.push_back(random_matrix<float>(6, 4, rng));
  const auto codes = rq_encode<float>(rq, rq.codebooks[0].row(3));
  EXPECT_EQ(codes, std::vector<std::uint32_t>{3});
}

TEST(RqEncode, OneDimensionalExample) {
  RqModel<double> rq;
  rq.codebooks.push_back(Matrix<double>(2, 1, std::vector<double>{0, 4}));
  rq.codebooks.push_back(Matrix<double>(2, 1, std::vector<double>{-1, 1}));
  const double x[] = {3.1};
  double err = 0;
  const auto codes = rq_encode<double>(rq, x, &err);
  EXPECT_EQ(codes, (std::vector<std::uint32_t>{1, 0}));
  EXPECT_DOUBLE_EQ(rq_decode(rq, codes)[0], 3.0);
  // Brute force over the four code pairs agrees with greedy.
  double best = 1e9;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) best = std::min(best, std::abs(x[0] - rq.codebooks[0](a, 0) - rq.codebooks[1](b, 0)));
  EXPECT_NEAR(best, std::abs(x[0] - 3.0), 1e-12);
  EXPECT_NEAR(err, 0.01, 1e-12);
}

TEST(RqEncode, GreedyMatchesPerStepScan) {
  Rng rng(6);
  const auto rq = qinco::testing::random_rq<float>(3, 5, 4, rng);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_matrix<float>(1, 4, rng);
    const auto codes = rq_encode<float>(rq, x.row(0));
    std::vector<double> r(x.row(0).begin(), x.row(0).end());
    for (std::size_t m = 0; m < 3; ++m) {
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < 5; ++k) {
        double s = 0;
        for (std::size_t d = 0; d < 4; ++d) {
          const double diff = r[d] - rq.codebooks[m](k, d);
          s += diff * diff;
        }
        if (s < bd) {
          bd = s;
          best = k;
        }
      }
      EXPECT_EQ(codes[m], best);
      for (std::size_t d = 0; d < 4; ++d) r[d] -= rq.codebooks[m](best, d);
    }
  }
}

TEST(RqDecode, ZeroCodebooksAndErrors) {
  RqModel<float> rq;
  rq.codebooks.assign(2, Matrix<float>(3, 2));
  const std::uint32_t codes[] = {1, 2};
  for (float v : rq_decode<float>(rq, codes)) EXPECT_EQ(v, 0.0f);
  const std::uint32_t bad[] = {1, 3};
  EXPECT_THROW(rq_decode<float>(rq, bad), std::out_of_range);
  const float wrong_dim[] = {1, 2, 3};
  EXPECT_THROW(rq_encode<float>(rq, wrong_dim), std::invalid_argument);
}

TEST(RqDecode, ReconstructionErrorMatchesEncoder) {
  Rng rng(8);
  const auto data = random_matrix<float>(300, 5, rng);
  const auto rq = rq_train(data, 3, 8, rng).model;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    double err = 0;
    const auto codes = rq_encode<float>(rq, data.row(i), &err);
    const auto rec = rq_decode<float>(rq, codes);
    EXPECT_NEAR((sq_l2<float, float>(data.row(i), rec)), err, 1e-6 * std::max(1.0, err));
  }
}

}  // namespace
