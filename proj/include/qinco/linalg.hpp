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

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qinco/parallel.hpp"
#include "qinco/rng.hpp"

namespace qinco {

/// Dense row-major matrix. Vectors are 1×D matrices or plain spans.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  const std::vector<T>& values() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  Matrix rows_subset(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = row(idx[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  Matrix row_range(std::size_t begin, std::size_t end) const {
    Matrix out(end - begin, cols_);
    std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, out.data_.begin());
    return out;
  }

  Matrix col_range(std::size_t begin, std::size_t end) const {
    Matrix out(rows_, end - begin);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = (*this)(r, c);
    }
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

template <typename A, typename B>
void require_same_cols(const Matrix<A>& a, const Matrix<B>& b, const char* what) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                shape_str(a.rows(), a.cols()) + " vs " +
                                shape_str(b.rows(), b.cols()) + ")");
  }
}

// Squared L2 distance accumulated in double.
template <typename T, typename U>
double sq_l2(std::span<const T> a, std::span<const U> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    acc += diff * diff;
  }
  return acc;
}

template <typename T, typename U>
double dot(std::span<const T> a, std::span<const U> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) acc += static_cast<double>(a[d]) * static_cast<double>(b[d]);
  return acc;
}

template <typename T>
double sq_norm(std::span<const T> a) {
  return dot(a, a);
}

struct Nearest {
  std::size_t index = 0;
  double distance = std::numeric_limits<double>::infinity();
};

// Nearest row of `points` to `query`; the smallest index wins ties.
template <typename T>
Nearest nearest_row(std::span<const T> query, const Matrix<T>& points) {
  Nearest best;
  for (std::size_t k = 0; k < points.rows(); ++k) {
    const double d = sq_l2(query, points.row(k));
    if (d < best.distance) best = {k, d};
  }
  return best;
}

/// Entry (n, k) is the squared L2 distance between queries[n] and points[k].
template <typename T>
Matrix<double> pairwise_sq_l2(const Matrix<T>& queries, const Matrix<T>& points) {
  require_same_cols(queries, points, "pairwise_sq_l2");
  Matrix<double> out(queries.rows(), points.rows());
  parallel_for(queries.rows(), [&](std::size_t n) {
    auto q = queries.row(n);
    for (std::size_t k = 0; k < points.rows(); ++k) out(n, k) = sq_l2(q, points.row(k));
  });
  return out;
}

/// Regularization for solve_least_squares. `automatic()` uses
/// 1e-6 · trace(AᵀA) / P.
struct Ridge {
  double value = 0.0;
  bool automatic_scale = false;

  static Ridge none() { return {}; }
  static Ridge fixed(double v) { return {v, false}; }
  static Ridge automatic() { return {0.0, true}; }

  double resolve(const Matrix<double>& normal) const {
    if (!automatic_scale) return value;
    double trace = 0.0;
    for (std::size_t i = 0; i < normal.rows(); ++i) trace += normal(i, i);
    return 1e-6 * trace / static_cast<double>(normal.rows());
  }
};

/// Solves (N + ridge·I) X = R for symmetric positive (semi)definite N with a
/// Cholesky factorization. N is P×P, R is P×D.
inline Matrix<double> solve_normal_equations(Matrix<double> normal, const Matrix<double>& rhs,
                                             const Ridge& ridge) {
  const std::size_t p = normal.rows();
  if (normal.cols() != p || rhs.rows() != p) {
    throw std::invalid_argument("solve_normal_equations: shape mismatch (" +
                                shape_str(normal.rows(), normal.cols()) + ", rhs " +
                                shape_str(rhs.rows(), rhs.cols()) + ")");
  }
  if (ridge.value < 0.0) throw std::invalid_argument("solve_normal_equations: ridge must be >= 0");
  const double lambda = ridge.resolve(normal);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    normal(i, i) += lambda;
    max_diag = std::max(max_diag, std::abs(normal(i, i)));
  }
  const double pivot_floor = 1e-12 * (max_diag > 0.0 ? max_diag : 1.0);

  // In-place lower-triangular factor.
  Matrix<double>& chol = normal;
  for (std::size_t j = 0; j < p; ++j) {
    double diag = chol(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= chol(j, k) * chol(j, k);
    if (!(diag > pivot_floor)) {
      throw std::runtime_error(
          "solve_least_squares: normal matrix is singular or not positive definite at pivot " +
          std::to_string(j) + "; pass ridge > 0");
    }
    const double ljj = std::sqrt(diag);
    chol(j, j) = ljj;
    for (std::size_t i = j + 1; i < p; ++i) {
      double v = chol(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= chol(i, k) * chol(j, k);
      chol(i, j) = v / ljj;
    }
  }

  Matrix<double> x = rhs;
  const std::size_t d = rhs.cols();
  // Forward substitution L y = r, then back substitution Lᵀ x = y.
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double l = chol(i, k);
      if (l == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) x(i, c) -= l * x(k, c);
    }
    for (std::size_t c = 0; c < d; ++c) x(i, c) /= chol(i, i);
  }
  for (std::size_t ii = p; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < p; ++k) {
      const double l = chol(k, ii);
      if (l == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) x(ii, c) -= l * x(k, c);
    }
    for (std::size_t c = 0; c < d; ++c) x(ii, c) /= chol(ii, ii);
  }
  return x;
}

/// argmin_X ‖AX − B‖²_F + ridge·‖X‖²_F via the normal equations. AᵀA and AᵀB
/// are accumulated in one streaming pass over the rows of A.
template <typename T>
Matrix<double> solve_least_squares(const Matrix<T>& a, const Matrix<T>& b, const Ridge& ridge) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("solve_least_squares: row mismatch (" + shape_str(a.rows(), a.cols()) +
                                " vs " + shape_str(b.rows(), b.cols()) + ")");
  }
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("solve_least_squares: empty design");
  const std::size_t p = a.cols();
  const std::size_t d = b.cols();
  Matrix<double> normal(p, p);
  Matrix<double> rhs(p, d);
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto ar = a.row(n);
    auto br = b.row(n);
    for (std::size_t i = 0; i < p; ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      for (std::size_t j = 0; j <= i; ++j) normal(i, j) += ai * static_cast<double>(ar[j]);
      for (std::size_t c = 0; c < d; ++c) rhs(i, c) += ai * static_cast<double>(br[c]);
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) normal(i, j) = normal(j, i);
  }
  return solve_normal_equations(std::move(normal), rhs, ridge);
}

// y = x·W + b for W stored in×out. Accumulation order is fixed: bias, then
// inputs in ascending order.
template <typename T>
void affine(std::span<const T> x, const Matrix<T>& weight, std::span<const T> bias, std::span<T> y) {
  const std::size_t out = weight.cols();
  for (std::size_t o = 0; o < out; ++o) y[o] = bias[o];
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T xi = x[i];
    const T* w = weight.data() + i * out;
    for (std::size_t o = 0; o < out; ++o) y[o] += xi * w[o];
  }
}

// y += x·W (no bias).
template <typename T>
void accumulate_product(std::span<const T> x, const Matrix<T>& weight, std::size_t first_row,
                        std::span<T> y) {
  const std::size_t out = weight.cols();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T xi = x[i];
    const T* w = weight.data() + (first_row + i) * out;
    for (std::size_t o = 0; o < out; ++o) y[o] += xi * w[o];
  }
}

}  // namespace qinco
