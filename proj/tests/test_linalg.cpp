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

#include <Eigen/Dense>
#include <algorithm>
#include <set>

#include "qinco/linalg.hpp"
#include "qinco/rng.hpp"
#include "test_util.hpp"

namespace {

using namespace qinco;
using qinco::testing::random_matrix;

Eigen::MatrixXd to_eigen(const Matrix<double>& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

TEST(Pairwise, IdenticalPointsGiveZero) {
  Matrix<float> q(1, 2), p(1, 2);
  EXPECT_EQ(pairwise_sq_l2(q, p)(0, 0), 0.0);
}

TEST(Pairwise, HandExpandedTwoDimensional) {
  Matrix<float> q(1, 2, std::vector<float>{1, 0});
  Matrix<float> p(2, 2, std::vector<float>{0, 0, 1, 1});
  const auto d = pairwise_sq_l2(q, p);
  EXPECT_EQ(d(0, 0), 1.0);
  EXPECT_EQ(d(0, 1), 1.0);
}

TEST(Pairwise, MatchesNaiveLoopAndIsSymmetric) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix<float>(4, 3, rng);
    const auto b = random_matrix<float>(5, 3, rng);
    const auto ab = pairwise_sq_l2(a, b);
    const auto ba = pairwise_sq_l2(b, a);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double ref = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double t = static_cast<double>(a(i, k)) - b(j, k);
          ref += t * t;
        }
        EXPECT_NEAR(ab(i, j), ref, 1e-6 * std::max(1.0, ref));
        EXPECT_EQ(ab(i, j), ba(j, i));
        EXPECT_GE(ab(i, j), 0.0);
      }
    }
  }
}

TEST(Pairwise, DimensionMismatchThrows) {
  EXPECT_THROW(pairwise_sq_l2(Matrix<float>(1, 2), Matrix<float>(1, 3)), std::invalid_argument);
}

TEST(Nearest, LowestIndexWinsTies) {
  Matrix<float> p(3, 1, std::vector<float>{-1, 1, 1});
  const float q[] = {0.0f};
  const auto nn = nearest_row<float>(std::span<const float>(q), p);
  EXPECT_EQ(nn.index, 0u);
  EXPECT_EQ(nn.distance, 1.0);
}

TEST(LeastSquares, IdentityDesignReturnsTargets) {
  Matrix<double> a(3, 3);
  for (int i = 0; i < 3; ++i) a(i, i) = 1.0;
  Rng rng(2);
  const auto b = random_matrix<double>(3, 4, rng);
  const auto x = solve_least_squares(a, b, Ridge::none());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_DOUBLE_EQ(x.data()[i], b.data()[i]);
}

TEST(LeastSquares, MeanOfTargets) {
  Matrix<double> a(2, 1, std::vector<double>{1, 1});
  Matrix<double> b(2, 1, std::vector<double>{2, 4});
  EXPECT_DOUBLE_EQ(solve_least_squares(a, b, Ridge::none())(0, 0), 3.0);
}

TEST(LeastSquares, MatchesPseudoInverseOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const auto a = random_matrix<double>(10, 3, rng);
    const auto b = random_matrix<double>(10, 2, rng);
    const auto x = solve_least_squares(a, b, Ridge::none());
    const Eigen::MatrixXd ref = to_eigen(a).completeOrthogonalDecomposition().pseudoInverse() * to_eigen(b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(x(i, j), ref(i, j), 1e-6 * std::max(1.0, std::abs(ref(i, j))));
  }
}

TEST(LeastSquares, ResidualIsOrthogonalToDesign) {
  Rng rng(9);
  const auto a = random_matrix<float>(200, 12, rng);
  const auto b = random_matrix<float>(200, 5, rng);
  const auto x = solve_least_squares(a, b, Ridge::none());
  const Eigen::MatrixXd ea = to_eigen(a.cast<double>()), eb = to_eigen(b.cast<double>());
  const Eigen::MatrixXd grad = ea.transpose() * (ea * to_eigen(x) - eb);
  const double scale = (ea.transpose() * eb).cwiseAbs().maxCoeff();
  EXPECT_LE(grad.cwiseAbs().maxCoeff(), 1e-5 * scale);
}

TEST(LeastSquares, RidgeMatchesRegularizedOracle) {
  Rng rng(4);
  const auto a = random_matrix<double>(8, 5, rng);
  const auto b = random_matrix<double>(8, 3, rng);
  const double lambda = 0.7;
  const auto x = solve_least_squares(a, b, Ridge::fixed(lambda));
  const Eigen::MatrixXd ea = to_eigen(a);
  const Eigen::MatrixXd lhs = ea.transpose() * ea + lambda * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd ref = lhs.ldlt().solve(ea.transpose() * to_eigen(b));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(x(i, j), ref(i, j), 1e-9);
}

TEST(LeastSquares, SingularWithoutRidgeAsksForRidge) {
  Matrix<double> a(4, 2);  // second column never used
  for (std::size_t i = 0; i < 4; ++i) a(i, 0) = 1.0;
  Matrix<double> b(4, 1, 1.0);
  try {
    (void)solve_least_squares(a, b, Ridge::none());
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("ridge > 0"), std::string::npos);
  }
  const auto x = solve_least_squares(a, b, Ridge::automatic());
  EXPECT_NEAR(x(0, 0), 1.0, 1e-5);
  EXPECT_EQ(x(1, 0), 0.0);
}

TEST(Affine, RowVectorConvention) {
  Matrix<double> w(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  const double x[] = {1, -1};
  const double b[] = {0.5, 0, -0.5};
  double y[3];
  affine<double>(x, w, b, y);
  EXPECT_DOUBLE_EQ(y[0], -2.5);
  EXPECT_DOUBLE_EQ(y[1], -3.0);
  EXPECT_DOUBLE_EQ(y[2], -3.5);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(77), b(77), c(78);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    differs |= va != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, EngineIsStandardMersenneTwister) {
  Rng r(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = r.next_u64();
  EXPECT_EQ(v, 9981545732273789042ull);
}

TEST(Rng, SplitmixReferenceValue) { EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull); }

TEST(Rng, DerivedSeedsDifferByLabel) {
  EXPECT_NE(derive_seed(1, "rq"), derive_seed(1, "init"));
  EXPECT_NE(derive_seed(1, "rq"), derive_seed(2, "rq"));
  EXPECT_EQ(derive_seed(1, "rq"), derive_seed(1, "rq"));
}

TEST(Rng, BoundedAndPermutationHelpers) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.below(7), 7u);
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  auto p = r.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p[i], i);
  const auto s = r.sample_distinct(30, 30);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 30u);
}

TEST(Rng, NormalMoments) {
  Rng r(12);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

}  // namespace
