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
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "qinco/linalg.hpp"
#include "qinco/qinco_model.hpp"

namespace qinco {

/// N×M quantization indices plus optional per-vector reconstruction norms
/// (original units).
struct CodeArray {
  std::size_t n = 0;
  std::size_t steps = 0;
  std::size_t codebook_size = 0;
  std::vector<std::uint32_t> indices;
  std::vector<float> norms;

  CodeArray() = default;
  CodeArray(std::size_t n_, std::size_t steps_, std::size_t k)
      : n(n_), steps(steps_), codebook_size(k), indices(n_ * steps_, 0) {}

  std::span<std::uint32_t> row(std::size_t i) { return {indices.data() + i * steps, steps}; }
  std::span<const std::uint32_t> row(std::size_t i) const { return {indices.data() + i * steps, steps}; }
  bool has_norms() const { return !norms.empty(); }

  // Bytes used by one stored index.
  std::size_t index_bytes() const { return codebook_size <= 256 ? 1 : 2; }
  std::size_t code_bytes() const { return steps * index_bytes(); }

  void validate() const {
    if (codebook_size == 0 || codebook_size > 65536) {
      throw std::invalid_argument("CodeArray: K=" + std::to_string(codebook_size) + " outside [1, 65536]");
    }
    if (indices.size() != n * steps) throw std::invalid_argument("CodeArray: index count does not match N×M");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= codebook_size) {
        throw std::out_of_range("CodeArray: index " + std::to_string(indices[i]) + " at vector " +
                                std::to_string(i / std::max<std::size_t>(steps, 1)) + " step " +
                                std::to_string(i % std::max<std::size_t>(steps, 1)) +
                                " exceeds K=" + std::to_string(codebook_size));
      }
    }
    if (!norms.empty()) {
      if (norms.size() != n) throw std::invalid_argument("CodeArray: norm count does not match N");
      for (float v : norms) {
        if (!(v >= 0.0f)) throw std::invalid_argument("CodeArray: negative or NaN norm");
      }
    }
  }

  bool operator==(const CodeArray&) const = default;
};

namespace detail {

template <typename T>
void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": vector has dimension " + std::to_string(got) +
                                ", model expects " + std::to_string(want));
  }
}

template <typename T>
void to_normalized(std::span<const T> x, T scale, std::span<T> out) {
  for (std::size_t d = 0; d < x.size(); ++d) out[d] = x[d] / scale;
}

}  // namespace detail

/// Greedy encoding in normalized units. `x_hat` holds the starting estimate
/// on entry (zero, or the IVF centroid) and the reconstruction on exit.
/// Returns ‖x − x̂‖² after the last step.
template <typename T>
double encode_normalized(const QincoModel<T>& model, const ModelTables<T>& tables, std::span<const T> x,
                         std::span<T> x_hat, std::span<std::uint32_t> codes) {
  const std::size_t d = model.dim();
  std::vector<T> residual(d);
  for (std::size_t i = 0; i < d; ++i) residual[i] = x[i] - x_hat[i];
  for (std::size_t m = 0; m < model.steps(); ++m) {
    const Matrix<T> codebook = adapt_codebook(model, tables, m, std::span<const T>(x_hat));
    const Nearest nn = nearest_row<T>(residual, codebook);
    codes[m] = static_cast<std::uint32_t>(nn.index);
    auto c = codebook.row(nn.index);
    for (std::size_t i = 0; i < d; ++i) {
      x_hat[i] += c[i];
      residual[i] = x[i] - x_hat[i];
    }
  }
  return sq_norm<T>(residual);
}

/// Sequential decoding of the first `steps` indices in normalized units;
/// `x_hat` holds the starting estimate on entry.
template <typename T>
void decode_normalized(const QincoModel<T>& model, const ModelTables<T>& tables,
                       std::span<const std::uint32_t> codes, std::size_t steps, std::span<T> x_hat) {
  std::vector<T> c(model.dim());
  for (std::size_t m = 0; m < steps; ++m) {
    adapt_codeword(model, tables, m, codes[m], std::span<const T>(x_hat), std::span<T>(c));
    for (std::size_t i = 0; i < c.size(); ++i) x_hat[i] += c[i];
  }
}

/// Encodes one vector (original units). `start` is the IVF centroid for
/// coupled models, empty otherwise.
template <typename T>
std::vector<std::uint32_t> qinco_encode(const QincoModel<T>& model, std::span<const T> x,
                                        std::span<const T> start = {}) {
  detail::check_dim<T>(x.size(), model.dim(), "qinco_encode");
  for (T v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("qinco_encode: non-finite input");
  }
  const ModelTables<T> tables = prepare(model);
  std::vector<T> xn(model.dim()), xh(model.dim(), T{0});
  detail::to_normalized(x, model.norm_scale, std::span<T>(xn));
  if (!start.empty()) detail::to_normalized(start, model.norm_scale, std::span<T>(xh));
  std::vector<std::uint32_t> codes(model.steps());
  encode_normalized<T>(model, tables, xn, xh, codes);
  return codes;
}

/// Decodes the first `steps` indices (≤ M) back to original units.
template <typename T>
std::vector<T> qinco_decode(const QincoModel<T>& model, const ModelTables<T>& tables,
                            std::span<const std::uint32_t> codes, std::size_t steps,
                            std::span<const T> start = {}) {
  if (steps > model.steps() || steps > codes.size()) {
    throw std::invalid_argument("qinco_decode: prefix of " + std::to_string(steps) +
                                " steps exceeds available indices");
  }
  for (std::size_t m = 0; m < steps; ++m) {
    if (codes[m] >= model.codebook_size()) {
      throw std::out_of_range("qinco_decode: index " + std::to_string(codes[m]) + " at step " +
                              std::to_string(m) + " exceeds K=" + std::to_string(model.codebook_size()));
    }
  }
  std::vector<T> xh(model.dim(), T{0});
  if (!start.empty()) {
    detail::check_dim<T>(start.size(), model.dim(), "qinco_decode");
    detail::to_normalized(start, model.norm_scale, std::span<T>(xh));
  }
  decode_normalized<T>(model, tables, codes, steps, xh);
  for (T& v : xh) v *= model.norm_scale;
  return xh;
}

template <typename T>
std::vector<T> qinco_decode(const QincoModel<T>& model, std::span<const std::uint32_t> codes, std::size_t steps,
                            std::span<const T> start = {}) {
  return qinco_decode(model, prepare(model), codes, steps, start);
}

struct EncodeOptions {
  bool with_norms = false;
};

/// Encodes every row of `data`. `starts`, when given, holds the per-vector
/// starting estimate (original units). `sq_errors`, when given, receives the
/// final squared residual of each vector in original units.
template <typename T>
CodeArray encode_batch(const QincoModel<T>& model, const Matrix<T>& data, std::type_identity_t<const Matrix<T>*> starts = nullptr,
                       EncodeOptions opts = {}, std::vector<double>* sq_errors = nullptr) {
  detail::check_dim<T>(data.cols(), model.dim(), "encode_batch");
  if (!data.all_finite()) throw std::invalid_argument("encode_batch: non-finite input");
  if (starts && (starts->rows() != data.rows() || starts->cols() != data.cols())) {
    throw std::invalid_argument("encode_batch: starts shape does not match data");
  }
  const ModelTables<T> tables = prepare(model);
  CodeArray out(data.rows(), model.steps(), model.codebook_size());
  if (opts.with_norms) out.norms.assign(data.rows(), 0.0f);
  if (sq_errors) sq_errors->assign(data.rows(), 0.0);
  const double scale = model.norm_scale;
  parallel_for(data.rows(), [&](std::size_t i) {
    std::vector<T> xn(model.dim()), xh(model.dim(), T{0});
    detail::to_normalized(data.row(i), model.norm_scale, std::span<T>(xn));
    if (starts) detail::to_normalized(starts->row(i), model.norm_scale, std::span<T>(xh));
    const double err = encode_normalized<T>(model, tables, xn, xh, out.row(i));
    if (sq_errors) (*sq_errors)[i] = err * scale * scale;
    if (opts.with_norms) {
      for (T& v : xh) v *= model.norm_scale;
      out.norms[i] = static_cast<float>(std::sqrt(sq_norm<T>(xh)));
    }
  });
  return out;
}

/// Decodes the first `steps` indices of every code.
template <typename T>
Matrix<T> decode_batch(const QincoModel<T>& model, const CodeArray& codes, std::size_t steps,
                       std::type_identity_t<const Matrix<T>*> starts = nullptr) {
  if (codes.steps != model.steps() || codes.codebook_size != model.codebook_size()) {
    throw std::invalid_argument("decode_batch: codes (M=" + std::to_string(codes.steps) + ", K=" +
                                std::to_string(codes.codebook_size) + ") do not match model");
  }
  if (steps > model.steps()) throw std::invalid_argument("decode_batch: prefix exceeds M");
  codes.validate();
  const ModelTables<T> tables = prepare(model);
  Matrix<T> out(codes.n, model.dim());
  parallel_for(codes.n, [&](std::size_t i) {
    auto xh = out.row(i);
    if (starts) detail::to_normalized(starts->row(i), model.norm_scale, xh);
    decode_normalized<T>(model, tables, codes.row(i), steps, xh);
    for (T& v : xh) v *= model.norm_scale;
  });
  return out;
}

}  // namespace qinco
