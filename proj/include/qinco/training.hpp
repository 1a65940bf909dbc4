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
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "qinco/clustering.hpp"
#include "qinco/codec.hpp"
#include "qinco/linalg.hpp"
#include "qinco/qinco_model.hpp"

namespace qinco {

enum class LossMode : std::uint8_t {
  summed,     // Σ_m L^m, gradients flow through every partial reconstruction
  last_only,  // L^M only
  detached,   // Σ_m L^m, but L^m only updates step m's parameters
};

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::last_only: return "last_only";
    case LossMode::detached: return "detached";
    default: return "summed";
  }
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "summed") return LossMode::summed;
  if (s == "last_only") return LossMode::last_only;
  if (s == "detached") return LossMode::detached;
  throw std::invalid_argument("unknown loss mode '" + s + "' (expected summed|last_only|detached)");
}

struct TrainConfig {
  std::size_t batch_size = 1024;
  double base_lr = 1e-4;
  double lr_drop_factor = 10.0;
  std::size_t lr_patience_epochs = 10;
  std::size_t stop_patience_epochs = 50;
  std::size_t max_epochs = 100;
  LossMode loss_mode = LossMode::summed;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
    if (lr_patience_epochs == 0 || stop_patience_epochs == 0) {
      throw std::invalid_argument("TrainConfig: patience values must be >= 1");
    }
    if (!(lr_drop_factor > 0.0)) throw std::invalid_argument("TrainConfig: lr_drop_factor must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;       // mean Σ_m L^m over the epoch's batches
  double valid_loss = 0.0;       // Σ_m L^m on the validation set
  double valid_final_mse = 0.0;  // L^M on the validation set
  double lr = 0.0;
};

struct TrainReport {
  double initial_valid_loss = 0.0;
  std::vector<double> initial_step_mse;  // validation, per step, before training
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;            // 0 = the initial model was never beaten
  double best_valid_loss = 0.0;
  std::vector<double> final_step_mse;    // validation, per step, best model
};

/// Largest absolute component of the training set.
template <typename T>
T normalize_fit(const Matrix<T>& train) {
  T scale = T{0};
  for (T v : train.flat()) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize_fit: non-finite training data");
    scale = std::max(scale, static_cast<T>(std::abs(v)));
  }
  if (!(scale > T{0})) throw std::invalid_argument("normalize_fit: training set is all zeros");
  return scale;
}

template <typename T>
Matrix<T> normalized(const Matrix<T>& data, T scale) {
  Matrix<T> out(data.rows(), data.cols());
  for (std::size_t i = 0; i < data.size(); ++i) out.data()[i] = data.data()[i] / scale;
  return out;
}

namespace detail {

struct GradientPlan {
  std::vector<char> active;  // L^m included
  bool propagate = true;     // flow through x̂^m into earlier steps
};

inline GradientPlan plan_for(LossMode mode, std::size_t steps) {
  GradientPlan p;
  p.active.assign(steps, 1);
  if (mode == LossMode::last_only) {
    std::fill(p.active.begin(), p.active.end(), 0);
    p.active.back() = 1;
  }
  p.propagate = mode != LossMode::detached;
  return p;
}

constexpr std::size_t kGradChunk = 64;

}  // namespace detail

/// Two-pass loss over rows `rows` of a normalized batch: codes are found
/// without gradient bookkeeping, then the selected codewords are re-evaluated
/// with cached activations. Returns per-step sums of ‖r^m − c^m‖² (not yet
/// averaged). When `grads` is non-null, the gradient of
/// scale·Σ_{active m} L^m is accumulated into it.
template <typename T>
std::vector<double> loss_and_gradients(const QincoModel<T>& model, const ModelTables<T>& tables,
                                       const Matrix<T>& x, const Matrix<T>* starts,
                                       std::span<const std::size_t> rows, const detail::GradientPlan& plan,
                                       T scale, QincoModel<T>* grads) {
  const std::size_t d = model.dim();
  const std::size_t steps = model.steps();
  std::vector<double> losses(steps, 0.0);
  std::vector<std::uint32_t> codes(steps);
  std::vector<T> xh(d), c(d), err(d), g(d), gx(d);
  std::vector<std::vector<T>> errors(steps, std::vector<T>(d));
  std::vector<StepCache<T>> caches(steps);
  for (std::size_t row : rows) {
    auto xr = x.row(row);
    // Pass 1: codes only.
    if (starts) {
      auto s = starts->row(row);
      std::copy(s.begin(), s.end(), xh.begin());
    } else {
      std::fill(xh.begin(), xh.end(), T{0});
    }
    std::vector<T> start = xh;
    encode_normalized<T>(model, tables, xr, xh, codes);
    // Pass 2: recompute the selected codewords with activations.
    xh = start;
    for (std::size_t m = 0; m < steps; ++m) {
      adapt_codeword(model, tables, m, codes[m], std::span<const T>(xh), std::span<T>(c),
                     grads ? &caches[m] : nullptr);
      double l = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        xh[i] += c[i];
        errors[m][i] = xr[i] - xh[i];
        l += static_cast<double>(errors[m][i]) * static_cast<double>(errors[m][i]);
      }
      losses[m] += l;
    }
    if (!grads) continue;
    if (plan.propagate) {
      std::fill(g.begin(), g.end(), T{0});
      for (std::size_t m = steps; m-- > 0;) {
        if (plan.active[m]) {
          for (std::size_t i = 0; i < d; ++i) g[i] += T{-2} * scale * errors[m][i];
        }
        gx = g;
        backward<T>(model, caches[m], g, *grads, gx);
        g.swap(gx);
      }
    } else {
      for (std::size_t m = 0; m < steps; ++m) {
        if (!plan.active[m]) continue;
        for (std::size_t i = 0; i < d; ++i) g[i] = T{-2} * scale * errors[m][i];
        backward<T>(model, caches[m], g, *grads);
      }
    }
  }
  return losses;
}

/// Per-step mean losses L^m (normalized units) on `batch`, given in original
/// units. `starts` holds per-row starting estimates for IVF-coupled models.
template <typename T>
std::vector<double> step_losses(const QincoModel<T>& model, const Matrix<T>& batch,
                                std::type_identity_t<const Matrix<T>*> starts = nullptr) {
  if (batch.cols() != model.dim()) throw std::invalid_argument("step_losses: dimension mismatch");
  const Matrix<T> xn = normalized(batch, model.norm_scale);
  std::optional<Matrix<T>> sn;
  if (starts) sn = normalized(*starts, model.norm_scale);
  const ModelTables<T> tables = prepare(model);
  const std::size_t chunks = (batch.rows() + detail::kGradChunk - 1) / detail::kGradChunk;
  std::vector<std::vector<double>> partial(chunks);
  const auto plan = detail::plan_for(LossMode::summed, model.steps());
  parallel_for(chunks, [&](std::size_t ci) {
    std::vector<std::size_t> rows;
    for (std::size_t r = ci * detail::kGradChunk; r < std::min(batch.rows(), (ci + 1) * detail::kGradChunk); ++r) {
      rows.push_back(r);
    }
    partial[ci] = loss_and_gradients<T>(model, tables, xn, sn ? &*sn : nullptr, rows, plan, T{1}, nullptr);
  });
  std::vector<double> out(model.steps(), 0.0);
  for (const auto& p : partial) {
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += p[m];
  }
  for (double& v : out) {
    v /= static_cast<double>(std::max<std::size_t>(batch.rows(), 1));
    if (!std::isfinite(v)) throw std::runtime_error("step_losses: non-finite loss");
  }
  return out;
}

/// Adam with PyTorch's default update rule.
template <typename T>
class Adam {
 public:
  Adam(const QincoModel<T>& model, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : first_(model.zeros_like()), second_(model.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(QincoModel<T>& model, QincoModel<T>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto params = model.parameters();
    auto gs = grads.parameters();
    auto ms = first_.parameters();
    auto vs = second_.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      T* w = params[p]->data();
      const T* g = gs[p]->data();
      T* m = ms[p]->data();
      T* v = vs[p]->data();
      for (std::size_t i = 0; i < params[p]->size(); ++i) {
        m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
        v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  QincoModel<T> first_;
  QincoModel<T> second_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Gradient of scale·Σ_{active m} L^m over the given rows, reduced in fixed
/// chunk order so the result does not depend on the thread count.
template <typename T>
std::vector<double> batch_gradients(const QincoModel<T>& model, const ModelTables<T>& tables,
                                    const Matrix<T>& x, const Matrix<T>* starts,
                                    std::span<const std::size_t> rows, const detail::GradientPlan& plan,
                                    T scale, QincoModel<T>& grads) {
  const std::size_t chunks = (rows.size() + detail::kGradChunk - 1) / detail::kGradChunk;
  std::vector<QincoModel<T>> partial_grads(chunks);
  std::vector<std::vector<double>> partial_loss(chunks);
  parallel_for(chunks, [&](std::size_t ci) {
    const std::size_t begin = ci * detail::kGradChunk;
    const std::size_t end = std::min(rows.size(), begin + detail::kGradChunk);
    partial_grads[ci] = model.zeros_like();
    partial_loss[ci] = loss_and_gradients<T>(model, tables, x, starts, rows.subspan(begin, end - begin), plan,
                                             scale, &partial_grads[ci]);
  });
  grads = model.zeros_like();
  auto dst = grads.parameters();
  std::vector<double> losses(model.steps(), 0.0);
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    auto src = partial_grads[ci].parameters();
    for (std::size_t p = 0; p < dst.size(); ++p) {
      T* a = dst[p]->data();
      const T* b = src[p]->data();
      for (std::size_t i = 0; i < dst[p]->size(); ++i) a[i] += b[i];
    }
    for (std::size_t m = 0; m < losses.size(); ++m) losses[m] += partial_loss[ci][m];
  }
  return losses;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minimizes the configured loss with Adam, a plateau learning-rate schedule
/// and early stopping on the validation loss. Returns the best-validation
/// snapshot. Data are in original units; `train_starts`/`valid_starts` carry
/// per-row IVF centroids for coupled models.
template <typename T>
QincoModel<T> train(QincoModel<T> model, const Matrix<T>& train_data, const Matrix<T>& valid_data,
                    const TrainConfig& cfg, TrainReport& report, std::type_identity_t<const Matrix<T>*> train_starts = nullptr,
                    std::type_identity_t<const Matrix<T>*> valid_starts = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_data.cols() != model.dim() || valid_data.cols() != model.dim()) {
    throw std::invalid_argument("train: data dimension does not match model");
  }
  if (train_data.rows() == 0 || valid_data.rows() == 0) throw std::invalid_argument("train: empty data");
  if (model.config.ivf_coupled_step1 && (!train_starts || !valid_starts)) {
    throw std::invalid_argument("train: IVF-coupled model needs per-vector starting centroids");
  }
  const Matrix<T> xn = normalized(train_data, model.norm_scale);
  std::optional<Matrix<T>> sn;
  if (train_starts) sn = normalized(*train_starts, model.norm_scale);

  auto evaluate = [&](const QincoModel<T>& m) { return step_losses(m, valid_data, valid_starts); };
  auto total = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };

  report = TrainReport{};
  report.initial_step_mse = evaluate(model);
  report.initial_valid_loss = total(report.initial_step_mse);
  report.best_valid_loss = report.initial_valid_loss;
  report.final_step_mse = report.initial_step_mse;
  QincoModel<T> best = model;

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Adam<T> adam(model, cfg.beta1, cfg.beta2, cfg.eps);
  const auto plan = detail::plan_for(cfg.loss_mode, model.steps());
  double lr = cfg.base_lr;
  std::size_t since_best = 0;
  QincoModel<T> grads;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffle_rng.permutation(xn.rows());
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const ModelTables<T> tables = prepare(model);
      const T scale = static_cast<T>(1.0 / static_cast<double>(rows.size()));
      const std::vector<double> losses =
          batch_gradients<T>(model, tables, xn, sn ? &*sn : nullptr, rows, plan, scale, grads);
      const double batch_loss = total(losses);
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss;
      seen += rows.size();
      if (cfg.grad_clip > 0.0) {
        double norm2 = 0.0;
        grads.visit([&](const Matrix<T>& g) {
          for (T v : g.flat()) norm2 += static_cast<double>(v) * v;
        });
        const double norm = std::sqrt(norm2);
        if (norm > cfg.grad_clip) {
          const T factor = static_cast<T>(cfg.grad_clip / norm);
          grads.visit([&](Matrix<T>& g) {
            for (T& v : g.flat()) v *= factor;
          });
        }
      }
      adam.step(model, grads, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(seen);
    const std::vector<double> valid = evaluate(model);
    rec.valid_loss = total(valid);
    rec.valid_final_mse = valid.back();
    rec.lr = lr;
    if (!std::isfinite(rec.valid_loss)) {
      throw std::runtime_error("train: validation loss diverged at epoch " + std::to_string(epoch));
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.valid_loss < report.best_valid_loss) {
      report.best_valid_loss = rec.valid_loss;
      report.best_epoch = epoch;
      report.final_step_mse = valid;
      best = model;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.stop_patience_epochs) break;
      if (since_best % cfg.lr_patience_epochs == 0) lr /= cfg.lr_drop_factor;
    }
  }
  return best;
}

template <typename T>
struct FitResult {
  QincoModel<T> model;
  RqTrainResult<T> rq;
  TrainReport report;
};

template <typename T>
struct FitOptions {
  KmeansOptions rq;
  const Matrix<T>* train_starts = nullptr;  // per-row IVF centroids, original units
  const Matrix<T>* valid_starts = nullptr;
  std::optional<T> norm_scale;              // fixed scale instead of normalize_fit
  EpochCallback on_epoch;
};

/// Full pipeline: fit the normalization scale, train a greedy RQ on the
/// normalized data (minus the starting estimates for coupled models),
/// initialize the networks as pass-through and train.
template <typename T>
FitResult<T> fit_qinco(const Matrix<T>& train_data, const Matrix<T>& valid_data, const QincoConfig& qcfg,
                       const TrainConfig& tcfg, const FitOptions<T>& opts = {}) {
  qcfg.validate();
  if (train_data.cols() != qcfg.dim) throw std::invalid_argument("fit_qinco: data dimension does not match config");
  const T scale = opts.norm_scale ? *opts.norm_scale : normalize_fit(train_data);
  Matrix<T> targets = normalized(train_data, scale);
  if (opts.train_starts) {
    const Matrix<T> sn = normalized(*opts.train_starts, scale);
    for (std::size_t i = 0; i < targets.size(); ++i) targets.data()[i] -= sn.data()[i];
  }
  FitResult<T> out;
  Rng rq_rng(derive_seed(tcfg.seed, "rq"));
  out.rq = rq_train(targets, qcfg.steps, qcfg.codebook_size, rq_rng, opts.rq);
  Rng init_rng(derive_seed(tcfg.seed, "init"));
  QincoModel<T> model = init_from_rq(out.rq.model, qcfg, init_rng);
  model.norm_scale = scale;
  out.model = train(std::move(model), train_data, valid_data, tcfg, out.report, opts.train_starts,
                    opts.valid_starts, opts.on_epoch);
  return out;
}

}  // namespace qinco
