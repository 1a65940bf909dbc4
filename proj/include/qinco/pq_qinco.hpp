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

#include "qinco/codec.hpp"
#include "qinco/linalg.hpp"
#include "qinco/qinco_model.hpp"
#include "qinco/training.hpp"

namespace qinco {

/// Product split: the vector is cut into equal-width contiguous blocks, each
/// compressed by its own model.
template <typename T>
struct PqQincoModel {
  std::size_t block_dim = 0;
  std::vector<QincoModel<T>> blocks;

  std::size_t num_blocks() const { return blocks.size(); }
  std::size_t dim() const { return block_dim * blocks.size(); }
  std::size_t steps_per_block() const { return blocks.empty() ? 0 : blocks.front().steps(); }
  std::size_t codebook_size() const { return blocks.empty() ? 0 : blocks.front().codebook_size(); }
};

struct PqTrainReport {
  std::vector<TrainReport> blocks;
};

namespace detail {

inline std::size_t pq_block_dim(std::size_t dim, std::size_t num_blocks) {
  if (num_blocks == 0 || dim % num_blocks != 0) {
    throw std::invalid_argument("pq_qinco: D=" + std::to_string(dim) + " is not divisible by " +
                                std::to_string(num_blocks) + " blocks");
  }
  return dim / num_blocks;
}

inline std::uint64_t pq_block_seed(std::uint64_t seed, std::size_t b) {
  return seed + static_cast<std::uint64_t>(b) * 0x9E3779B97F4A7C15ull;
}

}  // namespace detail

/// Trains one model per block. All blocks share the normalization scale
/// fitted on the full training vectors; block b uses seed + b·φ so block 0
/// reproduces the unsplit model exactly.
template <typename T>
PqQincoModel<T> pq_qinco_train(const Matrix<T>& train_data, const Matrix<T>& valid_data, std::size_t num_blocks,
                               QincoConfig qcfg, const TrainConfig& tcfg, KmeansOptions km = {},
                               PqTrainReport* report = nullptr) {
  if (train_data.cols() != valid_data.cols()) throw std::invalid_argument("pq_qinco_train: train/valid dimension mismatch");
  PqQincoModel<T> pq;
  pq.block_dim = detail::pq_block_dim(train_data.cols(), num_blocks);
  if (qcfg.ivf_coupled_step1) throw std::invalid_argument("pq_qinco_train: IVF coupling is not supported per block");
  qcfg.dim = pq.block_dim;
  FitOptions<T> opts;
  opts.rq = km;
  opts.norm_scale = normalize_fit(train_data);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const std::size_t lo = b * pq.block_dim;
    TrainConfig bcfg = tcfg;
    bcfg.seed = detail::pq_block_seed(tcfg.seed, b);
    FitResult<T> fit = fit_qinco(train_data.col_range(lo, lo + pq.block_dim),
                                 valid_data.col_range(lo, lo + pq.block_dim), qcfg, bcfg, opts);
    pq.blocks.push_back(std::move(fit.model));
    if (report) report->blocks.push_back(std::move(fit.report));
  }
  return pq;
}

/// Codes of the blocks concatenated: row i holds B·M indices, block-major.
template <typename T>
CodeArray pq_qinco_encode(const PqQincoModel<T>& pq, const Matrix<T>& data) {
  if (data.cols() != pq.dim()) throw std::invalid_argument("pq_qinco_encode: dimension mismatch");
  const std::size_t m = pq.steps_per_block();
  CodeArray out(data.rows(), pq.num_blocks() * m, pq.codebook_size());
  for (std::size_t b = 0; b < pq.num_blocks(); ++b) {
    const std::size_t lo = b * pq.block_dim;
    const CodeArray part = encode_batch(pq.blocks[b], data.col_range(lo, lo + pq.block_dim));
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto src = part.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + b * m);
    }
  }
  return out;
}

template <typename T>
Matrix<T> pq_qinco_decode(const PqQincoModel<T>& pq, const CodeArray& codes) {
  const std::size_t m = pq.steps_per_block();
  if (codes.steps != pq.num_blocks() * m || codes.codebook_size != pq.codebook_size()) {
    throw std::invalid_argument("pq_qinco_decode: code layout does not match model");
  }
  Matrix<T> out(codes.n, pq.dim());
  for (std::size_t b = 0; b < pq.num_blocks(); ++b) {
    CodeArray part(codes.n, m, codes.codebook_size);
    for (std::size_t i = 0; i < codes.n; ++i) {
      auto src = codes.row(i);
      std::copy(src.begin() + b * m, src.begin() + (b + 1) * m, part.row(i).begin());
    }
    const Matrix<T> rec = decode_batch(pq.blocks[b], part, m);
    for (std::size_t i = 0; i < codes.n; ++i) {
      auto r = rec.row(i);
      std::copy(r.begin(), r.end(), out.row(i).begin() + b * pq.block_dim);
    }
  }
  return out;
}

}  // namespace qinco
