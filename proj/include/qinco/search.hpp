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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "qinco/clustering.hpp"
#include "qinco/codec.hpp"
#include "qinco/linalg.hpp"
#include "qinco/qinco_model.hpp"
#include "qinco/training.hpp"

namespace qinco {

/// Explicit additive codebooks fitted to the codes of an implicit-codebook
/// encoder. Reconstruction is Σ_m g^m_{i^m} (plus the IVF centroid for
/// coupled indexes).
template <typename T>
struct AqDecoder {
  std::vector<Matrix<T>> codebooks;  // M × (K×D), original units
  double fitted_mse = 0.0;

  std::size_t steps() const { return codebooks.size(); }

  void reconstruct(std::span<const std::uint32_t> code, std::span<T> out) const {
    std::fill(out.begin(), out.end(), T{0});
    for (std::size_t m = 0; m < codebooks.size(); ++m) {
      auto g = codebooks[m].row(code[m]);
      for (std::size_t d = 0; d < out.size(); ++d) out[d] += g[d];
    }
  }

  bool operator==(const AqDecoder&) const = default;
};

/// AᵀA and AᵀX for the one-hot design with one active column per step block,
/// built directly from the codes. Column m·K + k belongs to codeword k of step m.
struct AqNormalEquations {
  Matrix<double> normal;  // (M·K)×(M·K)
  Matrix<double> rhs;     // (M·K)×D
};

template <typename T>
AqNormalEquations aq_normal_equations(const CodeArray& codes, const Matrix<T>& targets) {
  if (codes.n != targets.rows()) throw std::invalid_argument("aq_normal_equations: codes/targets count mismatch");
  const std::size_t steps = codes.steps, k = codes.codebook_size, p = steps * k, d = targets.cols();
  AqNormalEquations eq{Matrix<double>(p, p), Matrix<double>(p, d)};
  for (std::size_t n = 0; n < codes.n; ++n) {
    auto code = codes.row(n);
    auto x = targets.row(n);
    for (std::size_t a = 0; a < steps; ++a) {
      const std::size_t ca = a * k + code[a];
      for (std::size_t b = 0; b < steps; ++b) eq.normal(ca, b * k + code[b]) += 1.0;
      auto r = eq.rhs.row(ca);
      for (std::size_t c = 0; c < d; ++c) r[c] += static_cast<double>(x[c]);
    }
  }
  return eq;
}

/// Least-squares fit of explicit codebooks to fixed codes:
/// min_G Σ_n ‖x_n − Σ_m g^m_{i^m_n}‖² (auto ridge for unused codewords).
template <typename T>
AqDecoder<T> aq_fit_codes(const CodeArray& codes, const Matrix<T>& targets) {
  if (codes.n < codes.steps * codes.codebook_size) {
    std::cerr << "warning: aq_fit with N=" << codes.n << " < M*K=" << codes.steps * codes.codebook_size
              << "; relying on ridge for unused codewords\n";
  }
  AqNormalEquations eq = aq_normal_equations(codes, targets);
  const Matrix<double> g = solve_normal_equations(std::move(eq.normal), eq.rhs, Ridge::automatic());
  AqDecoder<T> aq;
  const std::size_t k = codes.codebook_size, d = targets.cols();
  for (std::size_t m = 0; m < codes.steps; ++m) {
    Matrix<T> cb(k, d);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t c = 0; c < d; ++c) cb(i, c) = static_cast<T>(g(m * k + i, c));
    }
    aq.codebooks.push_back(std::move(cb));
  }
  std::vector<T> rec(d);
  double total = 0.0;
  for (std::size_t n = 0; n < codes.n; ++n) {
    aq.reconstruct(codes.row(n), rec);
    total += sq_l2<T, T>(targets.row(n), rec);
  }
  aq.fitted_mse = codes.n ? total / static_cast<double>(codes.n) : 0.0;
  return aq;
}

/// Encodes `train` with the model and fits the additive decoder. For coupled
/// models the regression targets are x minus the per-row starting centroid.
template <typename T>
AqDecoder<T> aq_fit(const QincoModel<T>& model, const Matrix<T>& train,
                    std::type_identity_t<const Matrix<T>*> starts = nullptr) {
  const CodeArray codes = encode_batch(model, train, starts);
  Matrix<T> targets = train;
  if (starts) {
    for (std::size_t i = 0; i < targets.size(); ++i) targets.data()[i] -= starts->data()[i];
  }
  return aq_fit_codes(codes, targets);
}

/// ⟨q, g^m_k⟩ for every codeword, computed once per query.
struct LookupTable {
  std::size_t steps = 0;
  std::size_t codebook_size = 0;
  std::vector<double> dots;  // M×K
  double query_sq_norm = 0.0;

  // ‖q‖² − 2·(⟨q, centroid⟩ + Σ_m T[m][i^m]) + norm².
  double distance(std::span<const std::uint32_t> code, double norm, double centroid_dot = 0.0) const {
    double ip = centroid_dot;
    const double* t = dots.data();
    for (std::size_t m = 0; m < steps; ++m, t += codebook_size) ip += t[code[m]];
    return query_sq_norm - 2.0 * ip + norm * norm;
  }
};

template <typename T>
LookupTable make_lookup_table(const AqDecoder<T>& aq, std::type_identity_t<std::span<const T>> query) {
  LookupTable lut;
  lut.steps = aq.steps();
  lut.codebook_size = aq.steps() ? aq.codebooks.front().rows() : 0;
  lut.dots.resize(lut.steps * lut.codebook_size);
  for (std::size_t m = 0; m < lut.steps; ++m) {
    for (std::size_t k = 0; k < lut.codebook_size; ++k) {
      lut.dots[m * lut.codebook_size + k] = dot<T, T>(query, aq.codebooks[m].row(k));
    }
  }
  lut.query_sq_norm = sq_norm(query);
  return lut;
}

/// Approximate squared distances from `query` to every encoded vector.
template <typename T>
std::vector<double> lut_distances(const AqDecoder<T>& aq, std::type_identity_t<std::span<const T>> query, const CodeArray& codes) {
  if (!codes.has_norms()) throw std::invalid_argument("lut_distances: code array has no stored norms");
  if (codes.steps != aq.steps()) throw std::invalid_argument("lut_distances: step count mismatch");
  const LookupTable lut = make_lookup_table(aq, query);
  std::vector<double> out(codes.n);
  for (std::size_t i = 0; i < codes.n; ++i) out[i] = lut.distance(codes.row(i), codes.norms[i]);
  return out;
}

struct SearchParams {
  std::size_t p_ivf = 1;
  std::size_t n_short = 10;
  std::size_t k = 10;

  void validate(std::size_t k_ivf) const {
    if (p_ivf < 1 || p_ivf > k_ivf) {
      throw std::invalid_argument("SearchParams: p_ivf=" + std::to_string(p_ivf) + " outside [1, " +
                                  std::to_string(k_ivf) + "]");
    }
    if (k < 1 || n_short < k) throw std::invalid_argument("SearchParams: need n_short >= k >= 1");
  }
};

struct SearchHit {
  std::uint32_t id = 0;
  double distance = 0.0;
  bool operator==(const SearchHit&) const = default;
};

/// Inverted file over implicit-codebook codes. For coupled models the bucket
/// centroid is the starting estimate of every code in the bucket.
template <typename T>
struct IvfIndex {
  struct List {
    std::vector<std::uint32_t> ids;
    std::vector<std::uint32_t> codes;  // ids.size() × M
    std::vector<float> norms;          // ‖AQ reconstruction‖, centroid included

    bool operator==(const List&) const = default;
  };

  Matrix<T> centroids;  // K_ivf × D, original units
  QincoModel<T> model;
  AqDecoder<T> aq;
  std::vector<List> lists;
  ModelTables<T> tables;  // derived from `model`, not persisted

  std::size_t k_ivf() const { return centroids.rows(); }
  bool coupled() const { return model.config.ivf_coupled_step1; }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : lists) n += l.ids.size();
    return n;
  }
  void refresh_tables() { tables = prepare(model); }
};

struct IvfTrainResult {
  TrainReport report;
  double coarse_mse = 0.0;
};

template <typename T>
Matrix<T> bucket_starts(const Matrix<T>& centroids, std::span<const std::uint32_t> buckets) {
  Matrix<T> out(buckets.size(), centroids.cols());
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    auto c = centroids.row(buckets[i]);
    std::copy(c.begin(), c.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::vector<std::uint32_t> assign_buckets(const Matrix<T>& centroids, const Matrix<T>& data) {
  std::vector<std::uint32_t> out(data.rows());
  parallel_for(data.rows(), [&](std::size_t i) {
    out[i] = static_cast<std::uint32_t>(nearest_row(data.row(i), centroids).index);
  });
  return out;
}

/// Coarse k-means, then a coupled model trained with each vector's bucket
/// centroid as x̂¹, then the additive decoder fitted on residual targets.
template <typename T>
IvfIndex<T> ivf_train(const Matrix<T>& train_data, const Matrix<T>& valid_data, std::size_t k_ivf,
                      QincoConfig qcfg, const TrainConfig& tcfg, KmeansOptions km = {},
                      IvfTrainResult* result = nullptr, const EpochCallback& on_epoch = {}) {
  Rng coarse_rng(derive_seed(tcfg.seed, "ivf-coarse"));
  KmeansResult<T> coarse = kmeans(train_data, k_ivf, coarse_rng, km);
  IvfIndex<T> index;
  index.centroids = coarse.centroids;
  const Matrix<T> train_starts = bucket_starts(index.centroids, coarse.assignments);
  const Matrix<T> valid_starts = bucket_starts(index.centroids, assign_buckets(index.centroids, valid_data));
  qcfg.ivf_coupled_step1 = true;
  FitOptions<T> opts;
  opts.rq = km;
  opts.train_starts = &train_starts;
  opts.valid_starts = &valid_starts;
  opts.on_epoch = on_epoch;
  FitResult<T> fit = fit_qinco(train_data, valid_data, qcfg, tcfg, opts);
  index.model = std::move(fit.model);
  index.aq = aq_fit(index.model, train_data, &train_starts);
  index.lists.resize(k_ivf);
  index.refresh_tables();
  if (result) {
    result->report = std::move(fit.report);
    result->coarse_mse = coarse.mse;
  }
  return index;
}

/// Wraps a plain (uncoupled) model as a single-bucket index with a zero
/// centroid: the flat shortlist + re-rank pipeline.
template <typename T>
IvfIndex<T> make_flat_index(QincoModel<T> model, AqDecoder<T> aq) {
  if (model.config.ivf_coupled_step1) throw std::invalid_argument("make_flat_index: model is IVF-coupled");
  IvfIndex<T> index;
  index.centroids = Matrix<T>(1, model.dim());
  index.model = std::move(model);
  index.aq = std::move(aq);
  index.lists.resize(1);
  index.refresh_tables();
  return index;
}

/// Assigns, encodes and appends `data` with ids first_id, first_id + 1, ...
/// Returns the per-vector QINCo squared reconstruction error.
template <typename T>
std::vector<double> ivf_add(IvfIndex<T>& index, const Matrix<T>& data, std::uint32_t first_id) {
  const std::vector<std::uint32_t> buckets = assign_buckets(index.centroids, data);
  const Matrix<T> starts = bucket_starts(index.centroids, buckets);
  std::vector<double> errors;
  const CodeArray codes = encode_batch(index.model, data, index.coupled() ? &starts : nullptr, {}, &errors);
  const std::size_t d = data.cols();
  std::vector<T> rec(d);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto& list = index.lists[buckets[i]];
    auto code = codes.row(i);
    index.aq.reconstruct(code, rec);
    if (index.coupled()) {
      auto c = starts.row(i);
      for (std::size_t j = 0; j < d; ++j) rec[j] += c[j];
    }
    list.ids.push_back(first_id + static_cast<std::uint32_t>(i));
    list.codes.insert(list.codes.end(), code.begin(), code.end());
    list.norms.push_back(static_cast<float>(std::sqrt(sq_norm<T>(rec))));
  }
  return errors;
}

namespace detail {

struct Candidate {
  double distance;
  std::uint32_t id;
  std::uint32_t list;
  std::uint32_t offset;
  bool operator<(const Candidate& o) const { return std::tie(distance, id) < std::tie(o.distance, o.id); }
};

}  // namespace detail

/// Indices of the p nearest coarse centroids, nearest first (ties by index).
template <typename T>
std::vector<std::uint32_t> probe_buckets(const IvfIndex<T>& index, std::type_identity_t<std::span<const T>> query, std::size_t p) {
  std::vector<std::pair<double, std::uint32_t>> d(index.k_ivf());
  for (std::size_t b = 0; b < d.size(); ++b) d[b] = {sq_l2<T, T>(query, index.centroids.row(b)), static_cast<std::uint32_t>(b)};
  std::partial_sort(d.begin(), d.begin() + p, d.end());
  std::vector<std::uint32_t> out(p);
  for (std::size_t i = 0; i < p; ++i) out[i] = d[i].second;
  return out;
}

/// The n_short best candidates by approximate (AQ) distance over the probed
/// buckets, in ascending (distance, id) order.
template <typename T>
std::vector<detail::Candidate> ivf_shortlist(const IvfIndex<T>& index, std::type_identity_t<std::span<const T>> query,
                                             const SearchParams& params) {
  params.validate(index.k_ivf());
  const LookupTable lut = make_lookup_table(index.aq, query);
  const std::size_t steps = index.model.steps();
  std::priority_queue<detail::Candidate> heap;
  for (std::uint32_t b : probe_buckets(index, query, params.p_ivf)) {
    const auto& list = index.lists[b];
    const double cdot = index.coupled() ? dot<T, T>(query, index.centroids.row(b)) : 0.0;
    for (std::size_t j = 0; j < list.ids.size(); ++j) {
      std::span<const std::uint32_t> code(list.codes.data() + j * steps, steps);
      detail::Candidate c{lut.distance(code, list.norms[j], cdot), list.ids[j], b, static_cast<std::uint32_t>(j)};
      if (heap.size() < params.n_short) {
        heap.push(c);
      } else if (c < heap.top()) {
        heap.pop();
        heap.push(c);
      }
    }
  }
  std::vector<detail::Candidate> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

/// Coarse probe → lookup-table shortlist → QINCo decode of the shortlist →
/// top-k by exact distance to the decoded vectors, ascending, ties by id.
template <typename T>
std::vector<SearchHit> ivf_search(const IvfIndex<T>& index, std::type_identity_t<std::span<const T>> query, const SearchParams& params) {
  const std::vector<detail::Candidate> shortlist = ivf_shortlist(index, query, params);
  const std::size_t steps = index.model.steps();
  std::vector<SearchHit> hits;
  hits.reserve(shortlist.size());
  for (const auto& c : shortlist) {
    const auto& list = index.lists[c.list];
    std::span<const std::uint32_t> code(list.codes.data() + static_cast<std::size_t>(c.offset) * steps, steps);
    std::span<const T> start;
    if (index.coupled()) start = index.centroids.row(c.list);
    const std::vector<T> rec = qinco_decode(index.model, index.tables, code, steps, start);
    hits.push_back({c.id, sq_l2<T, T>(query, rec)});
  }
  const std::size_t k = std::min(params.k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + k, hits.end(), [](const SearchHit& a, const SearchHit& b) {
    return std::tie(a.distance, a.id) < std::tie(b.distance, b.id);
  });
  hits.resize(k);
  return hits;
}

/// Ranking by the additive decoder alone (no re-ranking).
template <typename T>
std::vector<SearchHit> aq_search(const IvfIndex<T>& index, std::type_identity_t<std::span<const T>> query, const SearchParams& params) {
  const std::vector<detail::Candidate> shortlist = ivf_shortlist(index, query, params);
  std::vector<SearchHit> hits;
  for (std::size_t i = 0; i < std::min(params.k, shortlist.size()); ++i) {
    hits.push_back({shortlist[i].id, shortlist[i].distance});
  }
  return hits;
}

/// Decodes every code and ranks by exact distance (the re-ranking upper bound).
template <typename T>
std::vector<SearchHit> exhaustive_search(const Matrix<T>& decoded, std::type_identity_t<std::span<const T>> query, std::size_t k) {
  std::vector<SearchHit> hits(decoded.rows());
  for (std::size_t i = 0; i < decoded.rows(); ++i) {
    hits[i] = {static_cast<std::uint32_t>(i), sq_l2<T, T>(query, decoded.row(i))};
  }
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + k, hits.end(), [](const SearchHit& a, const SearchHit& b) {
    return std::tie(a.distance, a.id) < std::tie(b.distance, b.id);
  });
  hits.resize(k);
  return hits;
}

}  // namespace qinco
