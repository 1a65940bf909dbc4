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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "qinco/codec.hpp"
#include "qinco/linalg.hpp"

namespace qinco {

/// Mean over vectors of the squared L2 error.
template <typename T>
double mse(const Matrix<T>& original, const Matrix<T>& reconstructed) {
  if (original.rows() != reconstructed.rows() || original.cols() != reconstructed.cols()) {
    throw std::invalid_argument("mse: shape mismatch (" + shape_str(original.rows(), original.cols()) + " vs " +
                                shape_str(reconstructed.rows(), reconstructed.cols()) + ")");
  }
  if (original.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < original.rows(); ++i) total += sq_l2<T, T>(original.row(i), reconstructed.row(i));
  return total / static_cast<double>(original.rows());
}

using ResultLists = std::vector<std::vector<std::uint32_t>>;

/// Fraction of queries whose true nearest neighbor is among the first R
/// returned ids. `k` is the result-list length the search was asked for.
inline double recall_at(const ResultLists& results, std::span<const std::uint32_t> truth, std::size_t rank,
                        std::size_t k) {
  if (k < rank) {
    throw std::invalid_argument("recall_at: R=" + std::to_string(rank) + " exceeds k=" + std::to_string(k));
  }
  if (results.size() != truth.size()) throw std::invalid_argument("recall_at: query count mismatch");
  if (results.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& r = results[q];
    const std::size_t n = std::min(rank, r.size());
    if (std::find(r.begin(), r.begin() + n, truth[q]) != r.begin() + n) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

/// Shannon entropy (bits) of codeword usage per step, averaged over steps.
inline double codeword_entropy(const CodeArray& codes) {
  if (codes.n == 0 || codes.steps == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> counts(codes.codebook_size);
  for (std::size_t m = 0; m < codes.steps; ++m) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < codes.n; ++i) ++counts[codes.indices[i * codes.steps + m]];
    for (std::size_t c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(codes.n);
      total -= p * std::log2(p);
    }
  }
  return total / static_cast<double>(codes.steps);
}

/// MSE of prefix decoding after m = 0..M steps.
template <typename T>
std::vector<double> per_step_mse(const QincoModel<T>& model, const Matrix<T>& data, const CodeArray& codes,
                                 std::type_identity_t<const Matrix<T>*> starts = nullptr) {
  std::vector<double> out;
  for (std::size_t m = 0; m <= model.steps(); ++m) out.push_back(mse(data, decode_batch(model, codes, m, starts)));
  return out;
}

/// Exact k nearest neighbors of each query (double accumulation), ties by id.
template <typename T>
Matrix<std::int32_t> brute_force_knn(const Matrix<T>& base, const Matrix<T>& queries, std::size_t k) {
  require_same_cols(base, queries, "brute_force_knn");
  k = std::min(k, base.rows());
  Matrix<std::int32_t> out(queries.rows(), k);
  parallel_for(queries.rows(), [&](std::size_t q) {
    std::vector<std::pair<double, std::int32_t>> d(base.rows());
    for (std::size_t i = 0; i < base.rows(); ++i) {
      d[i] = {sq_l2<T, T>(queries.row(q), base.row(i)), static_cast<std::int32_t>(i)};
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (std::size_t j = 0; j < k; ++j) out(q, j) = d[j].second;
  });
  return out;
}

/// Median wall-clock time (microseconds) of `fn` divided by `items`.
template <typename Fn>
double median_micros_per_item(Fn&& fn, std::size_t items, std::size_t reps = 5) {
  std::vector<double> times;
  for (std::size_t r = 0; r < std::max<std::size_t>(reps, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() / static_cast<double>(std::max<std::size_t>(items, 1)));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

struct EvalReport {
  double mse = 0.0;
  std::map<std::size_t, double> recall_at;
  double entropy_bits = 0.0;
  std::vector<double> per_step_mse;
  double encode_us = 0.0;
  double decode_us = 0.0;
  double search_us = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mse"] = mse;
    nlohmann::json r = nlohmann::json::object();
    for (const auto& [rank, v] : recall_at) r[std::to_string(rank)] = v;
    j["recall_at"] = r;
    j["entropy_bits"] = entropy_bits;
    j["per_step_mse"] = per_step_mse;
    j["timings_us_per_vector"] = {{"encode", encode_us}, {"decode", decode_us}, {"search", search_us}};
    return j;
  }
};

}  // namespace qinco
