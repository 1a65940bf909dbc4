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
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qinco/clustering.hpp"
#include "qinco/linalg.hpp"

namespace qinco {

enum class Variant : std::uint8_t { standard = 0, low_rank = 1 };

inline const char* to_string(Variant v) { return v == Variant::low_rank ? "low_rank" : "standard"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "standard") return Variant::standard;
  if (s == "low_rank" || s == "lr") return Variant::low_rank;
  throw std::invalid_argument("unknown variant '" + s + "' (expected standard|low_rank)");
}

struct QincoConfig {
  std::size_t dim = 0;             // D
  std::size_t steps = 1;           // M
  std::size_t codebook_size = 1;   // K
  std::size_t blocks = 0;          // L residual blocks per step
  std::size_t hidden = 1;          // h
  Variant variant = Variant::standard;
  bool ivf_coupled_step1 = false;  // step 1 gets a net conditioned on the IVF centroid

  void validate() const {
    if (dim == 0 || steps == 0 || codebook_size == 0 || hidden == 0) {
      throw std::invalid_argument("QincoConfig: D, M, K and h must all be >= 1");
    }
    if (codebook_size > 65536) throw std::invalid_argument("QincoConfig: K must be <= 65536");
  }

  // Number of steps that carry a codebook-generating network.
  std::size_t net_steps() const { return ivf_coupled_step1 ? steps : steps - 1; }
  bool has_net(std::size_t m) const { return m > 0 || ivf_coupled_step1; }

  bool operator==(const QincoConfig&) const = default;
};

struct ParamCount {
  // Count with the residual-MLP term written as 2·L·D·h (weights only), the
  // form used for the published model sizes.
  std::uint64_t formula = 0;
  // Every trainable scalar, including the residual-MLP biases.
  std::uint64_t exact = 0;
};

inline ParamCount param_count(const QincoConfig& cfg) {
  const std::uint64_t d = cfg.dim, m = cfg.steps, k = cfg.codebook_size, l = cfg.blocks, h = cfg.hidden;
  const std::uint64_t concat = cfg.variant == Variant::standard ? 2 * d * d + d : 2 * d * h + h + h * d + d;
  const std::uint64_t nets = cfg.net_steps();
  ParamCount pc;
  pc.formula = m * k * d + nets * (concat + 2 * l * d * h);
  pc.exact = pc.formula + nets * l * (h + d);
  return pc;
}

/// Affine layer y = x·W + b with W stored in×out.
template <typename T>
struct Linear {
  Matrix<T> weight;
  Matrix<T> bias;  // 1×out

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  std::span<const T> b() const { return bias.row(0); }

  bool operator==(const Linear&) const = default;
};

template <typename T>
struct ResidualBlock {
  Linear<T> expand;    // D → h, ReLU after
  Linear<T> contract;  // h → D, added to the block input

  bool operator==(const ResidualBlock&) const = default;
};

/// Codebook-generating network of one step. The concatenated input is
/// (c̄ ‖ x̂): rows [0, D) of the first weight act on the base codeword, rows
/// [D, 2D) on the partial reconstruction.
template <typename T>
struct StepNet {
  Variant variant = Variant::standard;
  Linear<T> concat;  // standard: 2D → D
  Linear<T> down;    // low_rank: 2D → h
  Linear<T> up;      // low_rank: h → D, plus a skip of c̄
  std::vector<ResidualBlock<T>> blocks;

  StepNet() = default;
  StepNet(const QincoConfig& cfg) : variant(cfg.variant) {
    const std::size_t d = cfg.dim, h = cfg.hidden;
    if (variant == Variant::standard) {
      concat = Linear<T>(2 * d, d);
    } else {
      down = Linear<T>(2 * d, h);
      up = Linear<T>(h, d);
    }
    blocks.resize(cfg.blocks);
    for (auto& b : blocks) {
      b.expand = Linear<T>(d, h);
      b.contract = Linear<T>(h, d);
    }
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    if (variant == Variant::standard) {
      fn(concat.weight);
      fn(concat.bias);
    } else {
      fn(down.weight);
      fn(down.bias);
      fn(up.weight);
      fn(up.bias);
    }
    for (auto& b : blocks) {
      fn(b.expand.weight);
      fn(b.expand.bias);
      fn(b.contract.weight);
      fn(b.contract.bias);
    }
  }

  bool operator==(const StepNet&) const = default;
};

template <typename T>
struct QincoModel {
  QincoConfig config;
  std::vector<Matrix<T>> base;                  // M × (K×D), trainable
  std::vector<std::optional<StepNet<T>>> nets;  // empty slot = identity step
  T norm_scale = T{1};

  QincoModel() = default;
  explicit QincoModel(const QincoConfig& cfg) : config(cfg) {
    cfg.validate();
    base.assign(cfg.steps, Matrix<T>(cfg.codebook_size, cfg.dim));
    nets.resize(cfg.steps);
    for (std::size_t m = 0; m < cfg.steps; ++m) {
      if (cfg.has_net(m)) nets[m].emplace(cfg);
    }
  }

  std::size_t dim() const { return config.dim; }
  std::size_t steps() const { return config.steps; }
  std::size_t codebook_size() const { return config.codebook_size; }

  // Visits every trainable tensor: base codebooks in step order, then the
  // networks in step order.
  template <typename Fn>
  void visit(Fn&& fn) {
    for (auto& b : base) fn(b);
    for (auto& n : nets) {
      if (n) n->visit(fn);
    }
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<QincoModel*>(this)->visit([&](Matrix<T>& m) { fn(static_cast<const Matrix<T>&>(m)); });
  }

  std::vector<Matrix<T>*> parameters() {
    std::vector<Matrix<T>*> out;
    visit([&](Matrix<T>& m) { out.push_back(&m); });
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    visit([&](const Matrix<T>& m) { n += m.size(); });
    return n;
  }

  QincoModel zeros_like() const {
    QincoModel z = *this;
    z.visit([](Matrix<T>& m) { m.fill(T{0}); });
    return z;
  }

  template <typename U>
  QincoModel<U> cast() const {
    QincoModel<U> out(config);
    out.norm_scale = static_cast<U>(norm_scale);
    std::vector<const Matrix<T>*> src;
    visit([&](const Matrix<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](Matrix<U>& dst) { dst = src[i++]->template cast<U>(); });
    return out;
  }

  bool operator==(const QincoModel&) const = default;
};

/// Builds a model whose networks pass the base codeword through unchanged,
/// so that encoding and decoding initially coincide with the RQ it was
/// initialized from. Non-zeroed layers are drawn from U(±1/√fan_in).
template <typename T>
QincoModel<T> init_from_rq(const RqModel<T>& rq, const QincoConfig& cfg, Rng& rng) {
  cfg.validate();
  if (rq.steps() != cfg.steps || rq.codebook_size() != cfg.codebook_size || rq.dim() != cfg.dim) {
    throw std::invalid_argument("init_from_rq: RQ shape (M=" + std::to_string(rq.steps()) +
                                ", K=" + std::to_string(rq.codebook_size()) +
                                ", D=" + std::to_string(rq.dim()) + ") does not match config");
  }
  QincoModel<T> model(cfg);
  model.base = rq.codebooks;
  auto uniform_fill = [&](Matrix<T>& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : m.flat()) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  const std::size_t d = cfg.dim;
  for (auto& slot : model.nets) {
    if (!slot) continue;
    StepNet<T>& net = *slot;
    if (net.variant == Variant::standard) {
      for (std::size_t i = 0; i < d; ++i) net.concat.weight(i, i) = T{1};
    } else {
      uniform_fill(net.down.weight, 2 * d);
      uniform_fill(net.down.bias, 2 * d);
    }
    for (auto& b : net.blocks) {
      uniform_fill(b.expand.weight, d);
      uniform_fill(b.expand.bias, d);
    }
  }
  return model;
}

/// Per-step projection of the base codebook through the part of the first
/// layer that sees c̄ (plus its bias). Depends only on parameters, so it is
/// computed once per model and reused for every vector.
template <typename T>
struct ModelTables {
  std::vector<Matrix<T>> base_proj;  // empty for identity steps
};

template <typename T>
ModelTables<T> prepare(const QincoModel<T>& model) {
  ModelTables<T> t;
  t.base_proj.resize(model.steps());
  for (std::size_t m = 0; m < model.steps(); ++m) {
    if (!model.nets[m]) continue;
    const StepNet<T>& net = *model.nets[m];
    const Linear<T>& first = net.variant == Variant::standard ? net.concat : net.down;
    Matrix<T> proj(model.codebook_size(), first.out());
    for (std::size_t k = 0; k < model.codebook_size(); ++k) {
      auto y = proj.row(k);
      auto b = first.b();
      for (std::size_t o = 0; o < y.size(); ++o) y[o] = b[o];
      accumulate_product<T>(model.base[m].row(k), first.weight, 0, y);
    }
    t.base_proj[m] = std::move(proj);
  }
  return t;
}

/// Activations of one codeword evaluation, kept for the backward pass.
template <typename T>
struct StepCache {
  bool valid = false;
  std::size_t step = 0;
  std::size_t codeword = 0;
  std::vector<T> x_hat;
  std::vector<T> low_rank_hidden;             // low_rank only
  std::vector<std::vector<T>> block_input;    // per block, D
  std::vector<std::vector<T>> block_preact;   // per block, h
};

namespace detail {

// Scratch for evaluating one step at a fixed x̂.
template <typename T>
struct StepContext {
  std::vector<T> cond;    // x̂ · W_x, width D (standard) or h (low_rank)
  std::vector<T> hidden;  // h
  std::vector<T> delta;   // D
  std::vector<T> lr;      // h
};

template <typename T>
void condition(const StepNet<T>& net, std::size_t dim, std::span<const T> x_hat, StepContext<T>& ctx) {
  const Linear<T>& first = net.variant == Variant::standard ? net.concat : net.down;
  ctx.cond.assign(first.out(), T{0});
  accumulate_product<T>(x_hat, first.weight, dim, std::span<T>(ctx.cond));
}

// Evaluates f(x̂, c̄_k) into `out` given the conditioning term in ctx.
template <typename T>
void eval_codeword(const StepNet<T>& net, std::span<const T> proj_row, std::span<const T> base_row,
                   StepContext<T>& ctx, std::span<T> out, StepCache<T>* cache) {
  const std::size_t d = out.size();
  if (net.variant == Variant::standard) {
    for (std::size_t o = 0; o < d; ++o) out[o] = proj_row[o] + ctx.cond[o];
  } else {
    const std::size_t h = proj_row.size();
    ctx.lr.resize(h);
    for (std::size_t o = 0; o < h; ++o) ctx.lr[o] = proj_row[o] + ctx.cond[o];
    affine<T>(ctx.lr, net.up.weight, net.up.b(), out);
    for (std::size_t o = 0; o < d; ++o) out[o] += base_row[o];
    if (cache) cache->low_rank_hidden = ctx.lr;
  }
  if (cache) {
    cache->block_input.resize(net.blocks.size());
    cache->block_preact.resize(net.blocks.size());
  }
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    const ResidualBlock<T>& blk = net.blocks[l];
    ctx.hidden.resize(blk.expand.out());
    ctx.delta.resize(d);
    affine<T>(std::span<const T>(out.data(), d), blk.expand.weight, blk.expand.b(), ctx.hidden);
    if (cache) {
      cache->block_input[l].assign(out.begin(), out.end());
      cache->block_preact[l] = ctx.hidden;
    }
    for (T& v : ctx.hidden) v = v > T{0} ? v : T{0};
    affine<T>(ctx.hidden, blk.contract.weight, blk.contract.b(), ctx.delta);
    for (std::size_t o = 0; o < d; ++o) out[o] += ctx.delta[o];
  }
}

}  // namespace detail

inline void require_step(std::size_t m, std::size_t steps) {
  if (m >= steps) {
    throw std::out_of_range("step " + std::to_string(m) + " out of range (M=" + std::to_string(steps) + ")");
  }
}

/// All K codewords of step m (0-based) adapted to the partial reconstruction
/// x̂ (normalized units). Identity steps return the base codebook.
template <typename T>
Matrix<T> adapt_codebook(const QincoModel<T>& model, const ModelTables<T>& tables, std::size_t m,
                         std::span<const T> x_hat) {
  require_step(m, model.steps());
  if (x_hat.size() != model.dim()) throw std::invalid_argument("adapt_codebook: x_hat dimension mismatch");
  if (!model.nets[m]) return model.base[m];
  const StepNet<T>& net = *model.nets[m];
  detail::StepContext<T> ctx;
  detail::condition<T>(net, model.dim(), x_hat, ctx);
  Matrix<T> out(model.codebook_size(), model.dim());
  for (std::size_t k = 0; k < model.codebook_size(); ++k) {
    detail::eval_codeword<T>(net, tables.base_proj[m].row(k), model.base[m].row(k), ctx, out.row(k), nullptr);
  }
  return out;
}

template <typename T>
Matrix<T> adapt_codebook(const QincoModel<T>& model, std::size_t m, std::span<const T> x_hat) {
  return adapt_codebook(model, prepare(model), m, x_hat);
}

/// Single adapted codeword f(x̂, c̄_k); identical to row k of adapt_codebook.
/// When `cache` is given, the activations needed by backward() are stored.
template <typename T>
void adapt_codeword(const QincoModel<T>& model, const ModelTables<T>& tables, std::size_t m,
                    std::size_t k, std::span<const T> x_hat, std::span<T> out,
                    StepCache<T>* cache = nullptr) {
  require_step(m, model.steps());
  if (k >= model.codebook_size()) {
    throw std::out_of_range("codeword index " + std::to_string(k) + " out of range (K=" +
                            std::to_string(model.codebook_size()) + ")");
  }
  if (cache) {
    cache->valid = true;
    cache->step = m;
    cache->codeword = k;
    cache->x_hat.assign(x_hat.begin(), x_hat.end());
  }
  if (!model.nets[m]) {
    auto c = model.base[m].row(k);
    std::copy(c.begin(), c.end(), out.begin());
    return;
  }
  const StepNet<T>& net = *model.nets[m];
  detail::StepContext<T> ctx;
  detail::condition<T>(net, model.dim(), x_hat, ctx);
  detail::eval_codeword<T>(net, tables.base_proj[m].row(k), model.base[m].row(k), ctx, out, cache);
}

/// Accumulates into `grads` (same shape as the model) the gradient of
/// ⟨upstream, f(x̂, c̄_k)⟩ with respect to step m's parameters, including the
/// base codeword, and adds the gradient with respect to x̂ to `grad_x_hat`
/// when it is non-empty.
template <typename T>
void backward(const QincoModel<T>& model, const StepCache<T>& cache, std::span<const T> upstream,
              QincoModel<T>& grads, std::span<T> grad_x_hat = {}) {
  if (!cache.valid) throw std::logic_error("backward: no cached forward activations");
  const std::size_t m = cache.step;
  const std::size_t k = cache.codeword;
  const std::size_t d = model.dim();
  require_step(m, model.steps());
  auto grad_base = grads.base[m].row(k);
  if (!model.nets[m]) {
    for (std::size_t o = 0; o < d; ++o) grad_base[o] += upstream[o];
    return;
  }
  const StepNet<T>& net = *model.nets[m];
  StepNet<T>& gnet = *grads.nets[m];
  if (cache.block_input.size() != net.blocks.size()) {
    throw std::logic_error("backward: cached activations do not match the network");
  }

  std::vector<T> g(upstream.begin(), upstream.end());
  std::vector<T> gin(d);
  for (std::size_t l = net.blocks.size(); l-- > 0;) {
    const ResidualBlock<T>& blk = net.blocks[l];
    ResidualBlock<T>& gblk = gnet.blocks[l];
    const std::vector<T>& y_in = cache.block_input[l];
    const std::vector<T>& u = cache.block_preact[l];
    const std::size_t h = u.size();
    std::vector<T> gu(h);
    for (std::size_t i = 0; i < h; ++i) {
      const T v = u[i] > T{0} ? u[i] : T{0};
      const T* w = blk.contract.weight.data() + i * d;
      T* gw = gblk.contract.weight.data() + i * d;
      T acc = T{0};
      for (std::size_t o = 0; o < d; ++o) {
        gw[o] += v * g[o];
        acc += w[o] * g[o];
      }
      gu[i] = u[i] > T{0} ? acc : T{0};
    }
    for (std::size_t o = 0; o < d; ++o) gblk.contract.bias(0, o) += g[o];
    for (std::size_t i = 0; i < d; ++i) {
      const T* w = blk.expand.weight.data() + i * h;
      T* gw = gblk.expand.weight.data() + i * h;
      T acc = T{0};
      for (std::size_t o = 0; o < h; ++o) {
        gw[o] += y_in[i] * gu[o];
        acc += w[o] * gu[o];
      }
      gin[i] = g[i] + acc;
    }
    for (std::size_t o = 0; o < h; ++o) gblk.expand.bias(0, o) += gu[o];
    g.swap(gin);
  }

  auto base_row = model.base[m].row(k);
  const std::vector<T>& x_hat = cache.x_hat;
  // Gradient with respect to the first-layer output (width D or h).
  const Linear<T>* first = &net.concat;
  Linear<T>* gfirst = &gnet.concat;
  std::vector<T> gfirst_out;
  if (net.variant == Variant::standard) {
    gfirst_out = g;
  } else {
    const std::vector<T>& p = cache.low_rank_hidden;
    const std::size_t h = p.size();
    gfirst_out.assign(h, T{0});
    for (std::size_t i = 0; i < h; ++i) {
      const T* w = net.up.weight.data() + i * d;
      T* gw = gnet.up.weight.data() + i * d;
      T acc = T{0};
      for (std::size_t o = 0; o < d; ++o) {
        gw[o] += p[i] * g[o];
        acc += w[o] * g[o];
      }
      gfirst_out[i] = acc;
    }
    for (std::size_t o = 0; o < d; ++o) {
      gnet.up.bias(0, o) += g[o];
      grad_base[o] += g[o];
    }
    first = &net.down;
    gfirst = &gnet.down;
  }
  const std::size_t width = gfirst_out.size();
  for (std::size_t o = 0; o < width; ++o) gfirst->bias(0, o) += gfirst_out[o];
  for (std::size_t i = 0; i < 2 * d; ++i) {
    const T zi = i < d ? base_row[i] : x_hat[i - d];
    const T* w = first->weight.data() + i * width;
    T* gw = gfirst->weight.data() + i * width;
    T acc = T{0};
    for (std::size_t o = 0; o < width; ++o) {
      gw[o] += zi * gfirst_out[o];
      acc += w[o] * gfirst_out[o];
    }
    if (i < d) {
      grad_base[i] += acc;
    } else if (!grad_x_hat.empty()) {
      grad_x_hat[i - d] += acc;
    }
  }
}

}  // namespace qinco
