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

// qinco_cli: data generation, training, coding, indexing and evaluation.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qinco/qinco.hpp"

namespace {

using json = nlohmann::json;
using namespace qinco;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string config;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string basename_of(const std::string& path) { return std::filesystem::path(path).filename().string(); }

// Provenance block embedded in every artifact: command, effective flags,
// seed and content hashes of the inputs (basenames only, so reruns in a
// different directory stay byte-identical).
class Provenance {
 public:
  Provenance(std::string command, const Globals& g) {
    j_["tool"] = "qinco_cli";
    j_["command"] = std::move(command);
    j_["seed"] = g.seed;
    j_["config"] = json::object();
    j_["inputs"] = json::object();
  }
  template <typename V>
  void set(const std::string& key, const V& v) {
    j_["config"][key] = v;
  }
  void input(const std::string& path) {
    const auto bytes = read_file(path);
    j_["inputs"][basename_of(path)] = "fnv1a64:" + hex64(fnv1a64(bytes));
  }
  const json& get() const { return j_; }
  std::string dump() const { return j_.dump(); }

 private:
  json j_;
};

// Writes bytes, then reads the file back and checks it byte for byte.
void write_validated(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  write_file(path, bytes);
  if (read_file(path) != bytes) throw std::runtime_error("verification of '" + path + "' failed");
}

void write_text(const std::string& path, const std::string& text) {
  write_validated(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

std::vector<std::size_t> parse_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (item == "all") {
      out.push_back(0);
      continue;
    }
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::logic_error&) {
      pos = std::string::npos;
    }
    if (pos != item.size()) throw std::invalid_argument(std::string("bad value '") + item + "' in " + what);
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + " list is empty");
  return out;
}

Matrix<float> load_data(const std::string& path) { return read_vecs<float>(path); }

// Flags taken from a --config JSON object are appended unless the flag is
// already present on the command line.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  std::ifstream in(config);
  if (!in) throw std::runtime_error("cannot open config '" + config + "'");
  const json j = json::parse(in);
  if (!j.is_object()) throw std::runtime_error("config '" + config + "' must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    const bool present = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (present) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag + "=" + value.get<std::string>());
    } else {
      args.push_back(flag + "=" + value.dump());
    }
  }
  return args;
}

// Invalid flag values; main maps these to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Fn>
auto checked(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

struct ModelFlags {
  std::size_t m = 8;
  std::size_t k = 256;
  std::size_t l = 2;
  std::size_t h = 256;
  std::string variant = "standard";

  void add(CLI::App* app) {
    app->set_help_flag("--help", "print this help message and exit");  // frees -h for --h
    app->add_option("--M", m, "quantization steps")->capture_default_str();
    app->add_option("--K", k, "codebook size")->capture_default_str();
    app->add_option("--L", l, "residual blocks per step")->capture_default_str();
    app->add_option("--h", h, "hidden width")->capture_default_str();
    app->add_option("--variant", variant, "standard | low_rank")->capture_default_str();
  }
  QincoConfig config(std::size_t dim) const {
    QincoConfig c;
    c.dim = dim;
    c.steps = m;
    c.codebook_size = k;
    c.blocks = l;
    c.hidden = h;
    return checked([&] {
      c.variant = parse_variant(variant);
      c.validate();
      return c;
    });
  }
  void record(Provenance& p) const {
    p.set("M", m);
    p.set("K", k);
    p.set("L", l);
    p.set("h", h);
    p.set("variant", variant);
  }
};

struct TrainFlags {
  double lr = 1e-4;
  std::size_t batch = 1024;
  std::size_t epochs = 100;
  std::size_t lr_patience = 10;
  std::size_t stop_patience = 50;
  std::size_t kmeans_iters = 25;
  std::string loss_mode = "summed";
  double grad_clip = 0.0;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "base learning rate")->capture_default_str();
    app->add_option("--batch-size", batch, "minibatch size")->capture_default_str();
    app->add_option("--epochs", epochs, "maximum epochs")->capture_default_str();
    app->add_option("--lr-patience", lr_patience, "epochs without improvement before a LR drop")->capture_default_str();
    app->add_option("--stop-patience", stop_patience, "epochs without improvement before stopping")
        ->capture_default_str();
    app->add_option("--kmeans-iters", kmeans_iters, "Lloyd iterations for RQ and coarse k-means")
        ->capture_default_str();
    app->add_option("--loss-mode", loss_mode, "summed | last_only | detached")->capture_default_str();
    app->add_option("--grad-clip", grad_clip, "global gradient norm clip (0 = off)")->capture_default_str();
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.base_lr = lr;
    c.batch_size = batch;
    c.max_epochs = epochs;
    c.lr_patience_epochs = lr_patience;
    c.stop_patience_epochs = stop_patience;
    c.grad_clip = grad_clip;
    c.seed = seed;
    return checked([&] {
      c.loss_mode = parse_loss_mode(loss_mode);
      c.validate();
      return c;
    });
  }
  void record(Provenance& p) const {
    p.set("lr", lr);
    p.set("batch_size", batch);
    p.set("epochs", epochs);
    p.set("lr_patience", lr_patience);
    p.set("stop_patience", stop_patience);
    p.set("kmeans_iters", kmeans_iters);
    p.set("loss_mode", loss_mode);
    p.set("grad_clip", grad_clip);
  }
};

EpochCallback progress(const char* stage) {
  return [stage](const EpochRecord& r) {
    emit({{"event", "epoch"},
          {"stage", stage},
          {"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"valid_loss", r.valid_loss},
          {"valid_final_mse", r.valid_final_mse},
          {"lr", r.lr}});
  };
}

json report_json(const TrainReport& r) {
  json j;
  j["initial_valid_loss"] = r.initial_valid_loss;
  j["initial_step_mse"] = r.initial_step_mse;
  j["best_epoch"] = r.best_epoch;
  j["best_valid_loss"] = r.best_valid_loss;
  j["final_step_mse"] = r.final_step_mse;
  j["epochs_run"] = r.epochs.size();
  json e = json::array();
  for (const auto& x : r.epochs) {
    e.push_back({{"epoch", x.epoch},
                 {"train_loss", x.train_loss},
                 {"valid_loss", x.valid_loss},
                 {"valid_final_mse", x.valid_final_mse},
                 {"lr", x.lr}});
  }
  j["epochs"] = e;
  return j;
}

json params_json(const QincoConfig& c) {
  const ParamCount p = param_count(c);
  return {{"formula", p.formula}, {"exact", p.exact}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 10000, n_learn = 10000, n_valid = 1000, n_query = 1000, d = 32, clusters = 16, gt_k = 100;
  double decay = 1.0, spread = 1.0, min_scale = 0.2, max_scale = 0.6;
  std::string out;
};

void cmd_synth(const SynthArgs& a, const Globals& g) {
  GaussianMixture::Options o;
  o.dim = a.d;
  o.clusters = a.clusters;
  o.spectrum_decay = a.decay;
  o.center_spread = a.spread;
  o.min_scale = a.min_scale;
  o.max_scale = a.max_scale;
  if (a.n == 0) throw std::invalid_argument("synth-data: --n must be >= 1");
  const GaussianMixture mix(o, g.seed);
  Provenance prov("synth-data", g);
  prov.set("n", a.n);
  prov.set("n_learn", a.n_learn);
  prov.set("n_valid", a.n_valid);
  prov.set("n_query", a.n_query);
  prov.set("d", a.d);
  prov.set("clusters", a.clusters);
  prov.set("decay", a.decay);
  prov.set("spread", a.spread);
  prov.set("min_scale", a.min_scale);
  prov.set("max_scale", a.max_scale);
  prov.set("gt_k", a.gt_k);
  json files = json::object();
  auto write = [&](const char* part, std::size_t n) {
    Rng rng(derive_seed(g.seed, part));
    const Matrix<float> x = mix.sample(n, rng);
    const std::string path = a.out + "." + part + ".fvecs";
    const auto bytes = serialize_vecs(x, VecsKind::f32);
    write_validated(path, bytes);
    files[basename_of(path)] = "fnv1a64:" + hex64(fnv1a64(bytes));
    return x;
  };
  const Matrix<float> base = write("base", a.n);
  if (a.n_learn) write("learn", a.n_learn);
  if (a.n_valid) write("valid", a.n_valid);
  if (a.n_query) {
    const Matrix<float> query = write("query", a.n_query);
    const Matrix<std::int32_t> gt = brute_force_knn(base, query, a.gt_k);
    const std::string path = a.out + ".gt.ivecs";
    const auto bytes = serialize_vecs(gt, VecsKind::i32);
    write_validated(path, bytes);
    files[basename_of(path)] = "fnv1a64:" + hex64(fnv1a64(bytes));
  }
  json manifest = prov.get();
  manifest["outputs"] = files;
  write_text(a.out + ".json", manifest.dump(2) + "\n");
  emit({{"event", "done"}, {"command", "synth-data"}, {"outputs", files}});
}

struct TrainArgs {
  std::string data, valid, out_model, report;
  ModelFlags model;
  TrainFlags train;
};

void cmd_train(const TrainArgs& a, const Globals& g) {
  const Matrix<float> train = load_data(a.data);
  const Matrix<float> valid = load_data(a.valid);
  const QincoConfig qcfg = a.model.config(train.cols());
  const TrainConfig tcfg = a.train.config(g.seed);
  Provenance prov("train", g);
  a.model.record(prov);
  a.train.record(prov);
  prov.input(a.data);
  prov.input(a.valid);
  emit({{"event", "start"}, {"command", "train"}, {"n_train", train.rows()}, {"dim", train.cols()},
        {"params", params_json(qcfg)}});
  FitOptions<float> opts;
  opts.rq.iters = a.train.kmeans_iters;
  opts.on_epoch = progress("qinco");
  const FitResult<float> fit = fit_qinco(train, valid, qcfg, tcfg, opts);
  const std::string meta = prov.dump();
  write_validated(a.out_model, serialize_model(fit.model, meta));
  json rep = prov.get();
  rep["params"] = params_json(qcfg);
  rep["norm_scale"] = fit.model.norm_scale;
  rep["rq_step_mse"] = fit.rq.step_mse;
  rep["training"] = report_json(fit.report);
  write_text(a.report.empty() ? a.out_model + ".json" : a.report, rep.dump(2) + "\n");
  emit({{"event", "done"}, {"command", "train"}, {"best_epoch", fit.report.best_epoch},
        {"initial_step_mse", fit.report.initial_step_mse}, {"final_step_mse", fit.report.final_step_mse}});
}

void require_plain(const QincoModel<float>& m, const char* cmd) {
  if (m.config.ivf_coupled_step1) {
    throw std::invalid_argument(std::string(cmd) + ": model is IVF-coupled; use build-ivf/search with the index");
  }
}

struct EncodeArgs {
  std::string model, data, out;
  bool norms = false;
};

void cmd_encode(const EncodeArgs& a, const Globals& g) {
  const QincoModel<float> model = load_model<float>(a.model);
  require_plain(model, "encode");
  const Matrix<float> data = load_data(a.data);
  Provenance prov("encode", g);
  prov.set("norms", a.norms);
  prov.input(a.model);
  prov.input(a.data);
  std::vector<double> err;
  const CodeArray codes = encode_batch(model, data, nullptr, {a.norms}, &err);
  write_validated(a.out, serialize_codes(codes, prov.dump()));
  double total = 0.0;
  for (double e : err) total += e;
  emit({{"event", "done"}, {"command", "encode"}, {"n", codes.n}, {"code_bytes", codes.code_bytes()},
        {"mse", codes.n ? total / static_cast<double>(codes.n) : 0.0}});
}

struct DecodeArgs {
  std::string model, codes, out;
  long long prefix_bytes = -1;
};

void cmd_decode(const DecodeArgs& a, const Globals&) {
  const QincoModel<float> model = load_model<float>(a.model);
  require_plain(model, "decode");
  const CodeArray codes = load_codes(a.codes);
  std::size_t steps = model.steps();
  if (a.prefix_bytes >= 0) {
    const std::size_t b = static_cast<std::size_t>(a.prefix_bytes);
    if (b % codes.index_bytes() != 0 || b / codes.index_bytes() > model.steps()) {
      throw std::invalid_argument("decode: --prefix-bytes " + std::to_string(b) + " is not a whole number of indices <= " +
                                  std::to_string(codes.code_bytes()));
    }
    steps = b / codes.index_bytes();
  }
  const Matrix<float> rec = decode_batch(model, codes, steps);
  write_validated(a.out, serialize_vecs(rec, VecsKind::f32));
  emit({{"event", "done"}, {"command", "decode"}, {"n", rec.rows()}, {"steps", steps}});
}

std::vector<std::uint32_t> first_column(const Matrix<std::int32_t>& gt) {
  if (gt.cols() == 0) throw std::invalid_argument("ground truth has no columns");
  std::vector<std::uint32_t> out(gt.rows());
  for (std::size_t i = 0; i < gt.rows(); ++i) out[i] = static_cast<std::uint32_t>(gt(i, 0));
  return out;
}

struct EvalArgs {
  std::string model, base, query, gt, out;
  std::size_t k = 100;
  std::size_t reps = 5;
};

void cmd_eval(const EvalArgs& a, const Globals&) {
  const QincoModel<float> model = load_model<float>(a.model);
  require_plain(model, "eval");
  const Matrix<float> base = load_data(a.base);
  EvalReport rep;
  const CodeArray codes = encode_batch(model, base, nullptr);
  const Matrix<float> rec = decode_batch(model, codes, model.steps());
  rep.mse = mse(base, rec);
  rep.entropy_bits = codeword_entropy(codes);
  rep.per_step_mse = per_step_mse(model, base, codes);
  const std::size_t sample = std::min<std::size_t>(base.rows(), 1000);
  const Matrix<float> probe = base.row_range(0, sample);
  rep.encode_us = median_micros_per_item([&] { (void)encode_batch(model, probe, nullptr); }, sample, a.reps);
  const CodeArray probe_codes = encode_batch(model, probe, nullptr);
  rep.decode_us =
      median_micros_per_item([&] { (void)decode_batch(model, probe_codes, model.steps()); }, sample, a.reps);

  std::ostringstream prefix_csv;
  prefix_csv << "bytes,steps,mse";
  const bool have_queries = !a.query.empty() && !a.gt.empty();
  Matrix<float> query;
  std::vector<std::uint32_t> truth;
  const std::size_t ranks[] = {1, 10, 100};
  if (have_queries) {
    query = load_data(a.query);
    truth = first_column(read_vecs<std::int32_t>(a.gt, VecsKind::i32));
    if (truth.size() != query.rows()) throw std::invalid_argument("eval: ground truth rows do not match queries");
    prefix_csv << ",recall@1,recall@10,recall@100";
  }
  prefix_csv << "\n";
  for (std::size_t m = 0; m <= model.steps(); ++m) {
    prefix_csv << m * codes.index_bytes() << "," << m << "," << fmt(rep.per_step_mse[m]);
    if (have_queries) {
      const Matrix<float> dec = m == model.steps() ? rec : decode_batch(model, codes, m);
      ResultLists res(query.rows());
      parallel_for(query.rows(), [&](std::size_t q) {
        for (const auto& h : exhaustive_search(dec, query.row(q), a.k)) res[q].push_back(h.id);
      });
      for (std::size_t r : ranks) {
        const double v = a.k >= r ? recall_at(res, truth, r, a.k) : 0.0;
        prefix_csv << "," << fmt(v);
        if (m == model.steps() && a.k >= r) rep.recall_at[r] = v;
      }
      if (m == model.steps()) {
        rep.search_us = median_micros_per_item(
            [&] {
              for (std::size_t q = 0; q < std::min<std::size_t>(query.rows(), 100); ++q) {
                (void)exhaustive_search(dec, query.row(q), a.k);
              }
            },
            std::min<std::size_t>(query.rows(), 100), a.reps);
      }
    }
    prefix_csv << "\n";
  }
  json j = rep.to_json();
  j["code_bytes"] = codes.code_bytes();
  write_text(a.out + ".json", j.dump(2) + "\n");
  std::ostringstream step_csv;
  step_csv << "step,mse\n";
  for (std::size_t m = 0; m < rep.per_step_mse.size(); ++m) step_csv << m << "," << fmt(rep.per_step_mse[m]) << "\n";
  write_text(a.out + ".per_step.csv", step_csv.str());
  write_text(a.out + ".prefix.csv", prefix_csv.str());
  emit({{"event", "done"}, {"command", "eval"}, {"report", j}});
}

struct BuildIvfArgs {
  std::string data, valid, base, model, out;
  std::size_t k_ivf = 64;
  ModelFlags mflags;
  TrainFlags tflags;
};

void cmd_build_ivf(const BuildIvfArgs& a, const Globals& g) {
  const Matrix<float> train = load_data(a.data);
  const Matrix<float> base = load_data(a.base);
  Provenance prov("build-ivf", g);
  prov.input(a.data);
  prov.input(a.base);
  IvfIndex<float> index;
  if (!a.model.empty()) {
    prov.set("mode", "flat");
    prov.input(a.model);
    QincoModel<float> model = load_model<float>(a.model);
    require_plain(model, "build-ivf");
    AqDecoder<float> aq = aq_fit(model, train);
    index = make_flat_index(std::move(model), std::move(aq));
  } else {
    if (a.valid.empty()) throw std::invalid_argument("build-ivf: --valid is required when training");
    const Matrix<float> valid = load_data(a.valid);
    prov.input(a.valid);
    prov.set("mode", "ivf");
    prov.set("K_ivf", a.k_ivf);
    a.mflags.record(prov);
    a.tflags.record(prov);
    const QincoConfig qcfg = a.mflags.config(train.cols());
    emit({{"event", "start"}, {"command", "build-ivf"}, {"K_ivf", a.k_ivf}, {"params", params_json([&] {
            QincoConfig c = qcfg;
            c.ivf_coupled_step1 = true;
            return c;
          }())}});
    IvfTrainResult res;
    index = ivf_train(train, valid, a.k_ivf, qcfg, a.tflags.config(g.seed), KmeansOptions{a.tflags.kmeans_iters},
                      &res, progress("ivf-qinco"));
    emit({{"event", "trained"}, {"coarse_mse", res.coarse_mse}, {"training", report_json(res.report)}});
  }
  const std::vector<double> err = ivf_add(index, base, 0);
  double total = 0.0;
  for (double e : err) total += e;
  write_validated(a.out, serialize_index(index, prov.dump()));
  emit({{"event", "done"}, {"command", "build-ivf"}, {"n", index.size()}, {"aq_fitted_mse", index.aq.fitted_mse},
        {"database_mse", base.rows() ? total / static_cast<double>(base.rows()) : 0.0}});
}

struct SearchArgs {
  std::string index, query, gt, out;
  std::string p_ivf = "1", n_short = "100";
  std::size_t k = 100;
  bool aq_only = false;
};

void cmd_search(const SearchArgs& a, const Globals&) {
  const IvfIndex<float> index = load_index<float>(a.index);
  const Matrix<float> query = load_data(a.query);
  const std::vector<std::uint32_t> truth = first_column(read_vecs<std::int32_t>(a.gt, VecsKind::i32));
  if (truth.size() != query.rows()) throw std::invalid_argument("search: ground truth rows do not match queries");
  const std::size_t n = index.size();
  auto resolve = [&](const std::string& s, std::size_t all, const char* what) {
    std::vector<std::size_t> v = parse_list(s, what);
    for (auto& x : v) x = x == 0 ? all : x;  // 0 and "all" stand for everything
    return v;
  };
  const auto p_list = checked([&] { return resolve(a.p_ivf, index.k_ivf(), "--p-ivf"); });
  const auto s_list = checked([&] { return resolve(a.n_short, n, "--n-short"); });
  std::ostringstream csv;
  csv << "p_ivf,n_short,recall@1,recall@10,recall@100,qps\n";
  for (std::size_t p : p_list) {
    for (std::size_t ns : s_list) {
      SearchParams sp;
      sp.p_ivf = p;
      sp.n_short = std::max<std::size_t>(ns, 1);
      sp.k = std::min(a.k, sp.n_short);
      checked([&] { sp.validate(index.k_ivf()); });
      ResultLists res(query.rows());
      const auto t0 = std::chrono::steady_clock::now();
      parallel_for(query.rows(), [&](std::size_t q) {
        const auto hits = a.aq_only ? aq_search(index, query.row(q), sp) : ivf_search(index, query.row(q), sp);
        for (const auto& h : hits) res[q].push_back(h.id);
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      csv << p << "," << sp.n_short;
      for (std::size_t r : {1, 10, 100}) {
        csv << ",";
        if (sp.k >= r) csv << fmt(recall_at(res, truth, r, sp.k));
      }
      csv << "," << fmt(secs > 0 ? static_cast<double>(query.rows()) / secs : 0.0) << "\n";
      emit({{"event", "grid"}, {"p_ivf", p}, {"n_short", sp.n_short},
            {"recall@1", recall_at(res, truth, 1, sp.k)}});
    }
  }
  write_text(a.out, csv.str());
  emit({{"event", "done"}, {"command", "search"}, {"grid_points", p_list.size() * s_list.size()}});
}

struct BenchArgs {
  std::string model, data, out;
  std::size_t reps = 5;
};

void cmd_bench(const BenchArgs& a, const Globals&) {
  const QincoModel<float> model = load_model<float>(a.model);
  require_plain(model, "bench");
  const Matrix<float> data = load_data(a.data);
  const double enc = median_micros_per_item([&] { (void)encode_batch(model, data, nullptr); }, data.rows(), a.reps);
  const CodeArray codes = encode_batch(model, data, nullptr);
  const double dec =
      median_micros_per_item([&] { (void)decode_batch(model, codes, model.steps()); }, data.rows(), a.reps);
  const json j = {{"n", data.rows()},
                  {"threads", num_threads()},
                  {"encode_us_per_vector", enc},
                  {"decode_us_per_vector", dec},
                  {"params", params_json(model.config)}};
  if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
  emit({{"event", "done"}, {"command", "bench"}, {"result", j}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QINCo vector compression and search"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--config", g.config, "JSON object of flag overrides");
  app.fallthrough();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "generate a Gaussian-mixture dataset with ground truth");
  synth->add_option("--n", sa.n, "database vectors")->capture_default_str();
  synth->add_option("--n-learn", sa.n_learn, "training vectors")->capture_default_str();
  synth->add_option("--n-valid", sa.n_valid, "validation vectors")->capture_default_str();
  synth->add_option("--n-query", sa.n_query, "query vectors")->capture_default_str();
  synth->add_option("--d", sa.d, "dimension")->capture_default_str();
  synth->add_option("--clusters", sa.clusters, "mixture components")->capture_default_str();
  synth->add_option("--decay", sa.decay, "covariance spectrum decay")->capture_default_str();
  synth->add_option("--spread", sa.spread, "std of component centers")->capture_default_str();
  synth->add_option("--min-scale", sa.min_scale, "component scales are drawn uniformly from [min, max]")->capture_default_str();
  synth->add_option("--max-scale", sa.max_scale)->capture_default_str();
  synth->add_option("--gt-k", sa.gt_k, "neighbors stored per query")->capture_default_str();
  synth->add_option("--out", sa.out, "output prefix")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "fit RQ, initialize QINCo and train it");
  trn->add_option("--data", ta.data, "training vectors")->required();
  trn->add_option("--valid", ta.valid, "validation vectors")->required();
  trn->add_option("--out-model", ta.out_model, "checkpoint path")->required();
  trn->add_option("--report", ta.report, "JSON report path (default <out-model>.json)");
  ta.model.add(trn);
  ta.train.add(trn);

  EncodeArgs ea;
  auto* enc = app.add_subcommand("encode", "encode vectors to codes");
  enc->add_option("--model", ea.model)->required();
  enc->add_option("--data", ea.data)->required();
  enc->add_option("--out", ea.out)->required();
  enc->add_flag("--norms", ea.norms, "store reconstruction norms");

  DecodeArgs da;
  auto* dec = app.add_subcommand("decode", "decode codes to vectors");
  dec->add_option("--model", da.model)->required();
  dec->add_option("--codes", da.codes)->required();
  dec->add_option("--out", da.out)->required();
  dec->add_option("--prefix-bytes", da.prefix_bytes, "decode only the first bytes of each code");

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "MSE, entropy, per-step and prefix curves, exhaustive recall");
  ev->add_option("--model", va.model)->required();
  ev->add_option("--base", va.base)->required();
  ev->add_option("--query", va.query);
  ev->add_option("--gt", va.gt);
  ev->add_option("--k", va.k)->capture_default_str();
  ev->add_option("--reps", va.reps)->capture_default_str();
  ev->add_option("--out", va.out, "output prefix")->required();

  BuildIvfArgs ba;
  auto* biv = app.add_subcommand("build-ivf", "train an IVF-coupled model (or wrap --model) and index --base");
  biv->add_option("--data", ba.data, "training vectors")->required();
  biv->add_option("--valid", ba.valid, "validation vectors");
  biv->add_option("--base", ba.base, "database vectors")->required();
  biv->add_option("--model", ba.model, "existing plain model: build a single-bucket index");
  biv->add_option("--K-ivf", ba.k_ivf)->capture_default_str();
  biv->add_option("--out", ba.out)->required();
  ba.mflags.add(biv);
  ba.tflags.add(biv);

  SearchArgs sea;
  auto* srch = app.add_subcommand("search", "sweep (p_ivf, n_short) and report recall and QPS");
  srch->add_option("--index", sea.index)->required();
  srch->add_option("--query", sea.query)->required();
  srch->add_option("--gt", sea.gt)->required();
  srch->add_option("--p-ivf", sea.p_ivf, "comma list; 0 or 'all' = K_ivf")->capture_default_str();
  srch->add_option("--n-short", sea.n_short, "comma list; 0 or 'all' = database size")->capture_default_str();
  srch->add_option("--k", sea.k)->capture_default_str();
  srch->add_flag("--aq-only", sea.aq_only, "rank by the additive decoder without re-ranking");
  srch->add_option("--out", sea.out, "CSV path")->required();

  BenchArgs bea;
  auto* bench = app.add_subcommand("bench", "time encode and decode per vector");
  bench->add_option("--model", bea.model)->required();
  bench->add_option("--data", bea.data)->required();
  bench->add_option("--reps", bea.reps)->capture_default_str();
  bench->add_option("--out", bea.out);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    set_num_threads(g.threads);
    if (*synth) cmd_synth(sa, g);
    if (*trn) cmd_train(ta, g);
    if (*enc) cmd_encode(ea, g);
    if (*dec) cmd_decode(da, g);
    if (*ev) cmd_eval(va, g);
    if (*biv) cmd_build_ivf(ba, g);
    if (*srch) cmd_search(sea, g);
    if (*bench) cmd_bench(bea, g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
