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

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qinco/linalg.hpp"

namespace qinco {

template <typename T>
struct KmeansResult {
  Matrix<T> centroids;
  std::vector<std::uint32_t> assignments;
  double mse = 0.0;
  // Training MSE after each assignment step, one entry per iteration plus
  // the final assignment.
  std::vector<double> mse_history;
};

struct KmeansOptions {
  std::size_t iters = 25;
};

namespace detail {

template <typename T>
void require_finite(const Matrix<T>& m, const char* what) {
  if (!m.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// Assigns every row to its nearest centroid; returns per-cluster SSE and
// writes the total squared error to `total`.
template <typename T>
std::vector<double> assign(const Matrix<T>& data, const Matrix<T>& centroids,
                           std::vector<std::uint32_t>& assignments, double& total) {
  std::vector<double> dist(data.rows());
  parallel_for(data.rows(), [&](std::size_t n) {
    const Nearest nn = nearest_row(data.row(n), centroids);
    assignments[n] = static_cast<std::uint32_t>(nn.index);
    dist[n] = nn.distance;
  });
  std::vector<double> sse(centroids.rows(), 0.0);
  total = 0.0;
  for (std::size_t n = 0; n < data.rows(); ++n) {
    sse[assignments[n]] += dist[n];
    total += dist[n];
  }
  return sse;
}

}  // namespace detail

/// Lloyd's k-means with random-row initialization and a fixed
/// iteration budget. Empty clusters are re-seeded with a random member of the cluster
/// carrying the largest squared error.
template <typename T>
KmeansResult<T> kmeans(const Matrix<T>& data, std::size_t k, Rng& rng, KmeansOptions opts = {}) {
  const std::size_t n = data.rows();
  const std::size_t dim = data.cols();
  if (k == 0) throw std::invalid_argument("kmeans: K must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kmeans: need at least K=" + std::to_string(k) +
                                " training vectors, got " + std::to_string(n));
  }
  if (opts.iters == 0) throw std::invalid_argument("kmeans: iters must be >= 1");
  detail::require_finite(data, "kmeans");

  KmeansResult<T> res;
  res.centroids = data.rows_subset(rng.sample_distinct(n, k));
  res.assignments.assign(n, 0);

  for (std::size_t it = 0; it < opts.iters; ++it) {
    double total = 0.0;
    std::vector<double> sse = detail::assign(data, res.centroids, res.assignments, total);
    res.mse_history.push_back(total / static_cast<double>(n));

    Matrix<double> sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t c = res.assignments[i];
      ++counts[c];
      auto x = data.row(i);
      auto s = sums.row(c);
      for (std::size_t d = 0; d < dim; ++d) s[d] += static_cast<double>(x[d]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto dst = res.centroids.row(c);
      for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<T>(sums(c, d) / static_cast<double>(counts[c]));
    }

    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t donor = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (sse[j] > sse[donor]) donor = j;
      }
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i) {
        if (res.assignments[i] == donor) members.push_back(i);
      }
      if (members.empty()) break;
      auto src = data.row(members[rng.below(members.size())]);
      std::copy(src.begin(), src.end(), res.centroids.row(c).begin());
      sse[donor] = 0.0;
    }
  }

  double total = 0.0;
  detail::assign(data, res.centroids, res.assignments, total);
  res.mse = total / static_cast<double>(n);
  res.mse_history.push_back(res.mse);
  return res;
}

/// Residual quantizer: M explicit K×D codebooks applied greedily.
template <typename T>
struct RqModel {
  std::vector<Matrix<T>> codebooks;

  std::size_t steps() const { return codebooks.size(); }
  std::size_t codebook_size() const { return codebooks.empty() ? 0 : codebooks.front().rows(); }
  std::size_t dim() const { return codebooks.empty() ? 0 : codebooks.front().cols(); }
};

template <typename T>
struct RqTrainResult {
  RqModel<T> model;
  // Mean ‖r^{m+1}‖² on the training set after each step.
  std::vector<double> step_mse;
};

/// Greedy RQ training (beam size 1): step m runs k-means on the residuals
/// left by steps 1..m-1.
template <typename T>
RqTrainResult<T> rq_train(const Matrix<T>& data, std::size_t steps, std::size_t k, Rng& rng,
                          KmeansOptions opts = {}) {
  if (steps == 0) throw std::invalid_argument("rq_train: M must be >= 1");
  RqTrainResult<T> out;
  Matrix<T> recon(data.rows(), data.cols());
  Matrix<T> residual = data;
  for (std::size_t m = 0; m < steps; ++m) {
    KmeansResult<T> km = kmeans(residual, k, rng, opts);
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto c = km.centroids.row(km.assignments[i]);
      auto xh = recon.row(i);
      auto x = data.row(i);
      auto r = residual.row(i);
      for (std::size_t d = 0; d < data.cols(); ++d) {
        xh[d] += c[d];
        r[d] = x[d] - xh[d];
      }
      total += sq_norm<T>(r);
    }
    out.step_mse.push_back(total / static_cast<double>(data.rows()));
    out.model.codebooks.push_back(std::move(km.centroids));
  }
  return out;
}

/// Greedy encoding. The residual at each step is recomputed as x − x̂ so that
/// the implicit-codebook encoder reproduces it bit for bit at initialization.
template <typename T>
std::vector<std::uint32_t> rq_encode(const RqModel<T>& model, std::span<const T> x,
                                     double* final_sq_error = nullptr) {
  if (x.size() != model.dim()) {
    throw std::invalid_argument("rq_encode: vector has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(model.dim()));
  }
  std::vector<T> recon(x.size(), T{0});
  std::vector<T> residual(x.begin(), x.end());
  std::vector<std::uint32_t> codes;
  codes.reserve(model.steps());
  for (const auto& cb : model.codebooks) {
    const Nearest nn = nearest_row<T>(residual, cb);
    codes.push_back(static_cast<std::uint32_t>(nn.index));
    auto c = cb.row(nn.index);
    for (std::size_t d = 0; d < x.size(); ++d) {
      recon[d] += c[d];
      residual[d] = x[d] - recon[d];
    }
  }
  if (final_sq_error) *final_sq_error = sq_norm<T>(residual);
  return codes;
}

template <typename T>
std::vector<T> rq_decode(const RqModel<T>& model, std::span<const std::uint32_t> codes) {
  if (codes.size() > model.steps()) throw std::invalid_argument("rq_decode: too many indices");
  std::vector<T> recon(model.dim(), T{0});
  for (std::size_t m = 0; m < codes.size(); ++m) {
    if (codes[m] >= model.codebooks[m].rows()) {
      throw std::out_of_range("rq_decode: index " + std::to_string(codes[m]) + " at step " +
                              std::to_string(m) + " exceeds K=" +
                              std::to_string(model.codebooks[m].rows()));
    }
    auto c = model.codebooks[m].row(codes[m]);
    for (std::size_t d = 0; d < recon.size(); ++d) recon[d] += c[d];
  }
  return recon;
}

}  // namespace qinco
