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
#include <stdexcept>

#include "qinco/linalg.hpp"
#include "qinco/rng.hpp"

namespace qinco {

/// Synthetic Gaussian mixture with a random anisotropic covariance per
/// component: x = μ_c + s_c · A_c z, z ~ N(0, I), A_c with N(0, 1/D) entries.
class GaussianMixture {
 public:
  struct Options {
    std::size_t dim = 32;
    std::size_t clusters = 16;
    double center_spread = 1.0;
    double min_scale = 0.2;
    double max_scale = 0.6;
    // Column j of A_c is scaled by (j + 1)^-decay, giving each component a
    // decaying covariance spectrum in a random orientation.
    double spectrum_decay = 0.0;
  };

  GaussianMixture(const Options& opts, std::uint64_t seed) : opts_(opts) {
    if (opts.dim == 0 || opts.clusters == 0) throw std::invalid_argument("GaussianMixture: dim and clusters must be >= 1");
    Rng rng(derive_seed(seed, "mixture"));
    const std::size_t d = opts.dim;
    centers_ = Matrix<float>(opts.clusters, d);
    for (float& v : centers_.flat()) v = static_cast<float>(opts.center_spread * rng.normal());
    transforms_.reserve(opts.clusters);
    for (std::size_t c = 0; c < opts.clusters; ++c) {
      const double s = rng.uniform(opts.min_scale, opts.max_scale) / std::sqrt(static_cast<double>(d));
      Matrix<float> a(d, d);
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t k = 0; k < d; ++k) {
          const double decay = std::pow(static_cast<double>(k + 1), -opts.spectrum_decay);
          a(r, k) = static_cast<float>(s * decay * rng.normal());
        }
      }
      transforms_.push_back(std::move(a));
    }
  }

  std::size_t dim() const { return opts_.dim; }
  const Matrix<float>& centers() const { return centers_; }

  Matrix<float> sample(std::size_t n, Rng& rng) const {
    const std::size_t d = opts_.dim;
    Matrix<float> out(n, d);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = rng.below(opts_.clusters);
      for (double& v : z) v = rng.normal();
      auto x = out.row(i);
      const Matrix<float>& a = transforms_[c];
      for (std::size_t r = 0; r < d; ++r) {
        double acc = centers_(c, r);
        for (std::size_t k = 0; k < d; ++k) acc += a(r, k) * z[k];
        x[r] = static_cast<float>(acc);
      }
    }
    return out;
  }

 private:
  Options opts_;
  Matrix<float> centers_;
  std::vector<Matrix<float>> transforms_;
};

}  // namespace qinco
