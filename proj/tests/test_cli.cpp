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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qinco/qinco.hpp"
#include "qinco/storage.hpp"

namespace {

using namespace qinco;
namespace fs = std::filesystem;

std::string g_cli;
fs::path g_work;

int run(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > " + (g_work / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() {
  std::ifstream in(g_work / "last.log");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string p(const std::string& name) { return (g_work / name).string(); }

std::vector<std::uint8_t> bytes_of(const std::string& path) { return read_file(path); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    ASSERT_EQ(run("--seed 7 synth-data --n 2000 --n-learn 1500 --n-valid 200 --n-query 40 --d 8 --clusters 8 "
                  "--gt-k 20 --out " + p("ds")), 0) << last_log();
    ASSERT_EQ(run("--seed 7 train --data " + p("ds.learn.fvecs") + " --valid " + p("ds.valid.fvecs") +
                  " --M 3 --K 16 --L 1 --h 16 --lr 1e-3 --batch-size 256 --epochs 3 --out-model " + p("m.qinco")),
              0) << last_log();
  }
};

TEST_F(Cli, SynthDataIsDeterministicPerSeed) {
  ASSERT_EQ(run("--seed 7 synth-data --n 2000 --n-learn 1500 --n-valid 200 --n-query 40 --d 8 --clusters 8 "
                "--gt-k 20 --out " + p("again")), 0);
  for (const char* part : {".base.fvecs", ".learn.fvecs", ".valid.fvecs", ".query.fvecs", ".gt.ivecs"}) {
    EXPECT_EQ(bytes_of(p("ds") + part), bytes_of(p("again") + part)) << part;
  }
  ASSERT_EQ(run("--seed 8 synth-data --n 2000 --n-learn 1500 --n-valid 200 --n-query 40 --d 8 --clusters 8 "
                "--gt-k 20 --out " + p("other")), 0);
  EXPECT_NE(bytes_of(p("ds.base.fvecs")), bytes_of(p("other.base.fvecs")));
  const auto manifest = nlohmann::json::parse(std::ifstream(p("ds.json")));
  EXPECT_EQ(manifest.at("seed"), 7);
  EXPECT_EQ(manifest.at("outputs").size(), 5u);
}

TEST_F(Cli, GroundTruthMatchesBruteForce) {
  const auto base = read_vecs(p("ds.base.fvecs"));
  const auto query = read_vecs(p("ds.query.fvecs"));
  const auto gt = read_vecs<std::int32_t>(p("ds.gt.ivecs"));
  ASSERT_EQ(base.rows(), 2000u);
  ASSERT_EQ(gt.rows(), 40u);
  ASSERT_EQ(gt.cols(), 20u);
  for (std::size_t q = 0; q < query.rows(); ++q) {
    std::vector<std::pair<double, std::int32_t>> d;
    for (std::size_t i = 0; i < base.rows(); ++i) {
      double s = 0;
      for (std::size_t c = 0; c < base.cols(); ++c) {
        const double diff = double(query(q, c)) - double(base(i, c));
        s += diff * diff;
      }
      d.push_back({s, static_cast<std::int32_t>(i)});
    }
    std::sort(d.begin(), d.end());
    for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(gt(q, j), d[j].second);
  }
}

TEST_F(Cli, EncodeAndDecodeMatchTheLibrary) {
  ASSERT_EQ(run("encode --model " + p("m.qinco") + " --data " + p("ds.base.fvecs") + " --norms --out " + p("c.codes")), 0)
      << last_log();
  ASSERT_EQ(run("decode --model " + p("m.qinco") + " --codes " + p("c.codes") + " --out " + p("rec.fvecs")), 0);
  const auto model = load_model(p("m.qinco"));
  const auto base = read_vecs(p("ds.base.fvecs"));
  const auto codes = load_codes(p("c.codes"));
  const auto expect = encode_batch(model, base, nullptr, {true});
  EXPECT_EQ(codes, expect);
  EXPECT_EQ(read_vecs(p("rec.fvecs")), decode_batch(model, expect, 3));

  ASSERT_EQ(run("decode --model " + p("m.qinco") + " --codes " + p("c.codes") + " --prefix-bytes 0 --out " + p("z.fvecs")), 0);
  for (float v : read_vecs(p("z.fvecs")).flat()) ASSERT_EQ(v, 0.0f);
  ASSERT_EQ(run("decode --model " + p("m.qinco") + " --codes " + p("c.codes") + " --prefix-bytes 2 --out " + p("two.fvecs")), 0);
  EXPECT_EQ(read_vecs(p("two.fvecs")), decode_batch(model, expect, 2));
}

TEST_F(Cli, SearchWithEverythingMatchesExhaustiveEval) {
  ASSERT_EQ(run("eval --model " + p("m.qinco") + " --base " + p("ds.base.fvecs") + " --query " + p("ds.query.fvecs") +
                " --gt " + p("ds.gt.ivecs") + " --k 10 --reps 1 --out " + p("ev")), 0) << last_log();
  const auto ev = nlohmann::json::parse(std::ifstream(p("ev.json")));
  ASSERT_EQ(run("build-ivf --data " + p("ds.learn.fvecs") + " --base " + p("ds.base.fvecs") + " --model " +
                p("m.qinco") + " --out " + p("flat.ivf")), 0) << last_log();
  ASSERT_EQ(run("search --index " + p("flat.ivf") + " --query " + p("ds.query.fvecs") + " --gt " + p("ds.gt.ivecs") +
                " --p-ivf all --n-short all --k 10 --out " + p("s.csv")), 0) << last_log();
  std::ifstream in(p("s.csv"));
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "p_ivf,n_short,recall@1,recall@10,recall@100,qps");
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 6u);
  EXPECT_EQ(cells[0], "1");
  EXPECT_EQ(cells[1], "2000");
  EXPECT_DOUBLE_EQ(std::stod(cells[2]), ev["recall_at"]["1"].get<double>());
  EXPECT_DOUBLE_EQ(std::stod(cells[3]), ev["recall_at"]["10"].get<double>());
  EXPECT_EQ(cells[4], "");  // k = 10 < 100

  // "all" may also appear inside a list.
  ASSERT_EQ(run("search --index " + p("flat.ivf") + " --query " + p("ds.query.fvecs") + " --gt " + p("ds.gt.ivecs") +
                " --n-short 10,all --k 10 --out " + p("s2.csv")), 0) << last_log();
  std::ifstream in2(p("s2.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in2, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1].substr(0, 5), "1,10,");
  EXPECT_EQ(lines[2].substr(0, 7), "1,2000,");
}

TEST_F(Cli, BadInputsExitNonZero) {
  EXPECT_EQ(run("encode --model " + p("missing.qinco") + " --data " + p("ds.base.fvecs") + " --out " + p("x")), 1);
  EXPECT_EQ(run("train --data " + p("ds.learn.fvecs") + " --valid " + p("ds.valid.fvecs") + " --M 0 --out-model " + p("bad")), 2)
      << last_log();
  EXPECT_EQ(run("train --data " + p("ds.learn.fvecs") + " --valid " + p("ds.valid.fvecs") +
                " --loss-mode nope --out-model " + p("bad")), 2);
  EXPECT_NE(run("no-such-command"), 0);
  EXPECT_NE(run("encode --model " + p("m.qinco")), 0);  // missing required flags
  // A corrupted checkpoint names the byte offset.
  auto b = bytes_of(p("m.qinco"));
  b[8] = 9;
  write_file(p("corrupt.qinco"), b);
  EXPECT_EQ(run("encode --model " + p("corrupt.qinco") + " --data " + p("ds.base.fvecs") + " --out " + p("x")), 1);
  EXPECT_NE(last_log().find("byte offset 8"), std::string::npos) << last_log();
  EXPECT_EQ(run("decode --model " + p("m.qinco") + " --codes " + p("c.codes") + " --prefix-bytes 99 --out " + p("x")), 1);
  EXPECT_EQ(run("search --index " + p("flat.ivf") + " --query " + p("ds.query.fvecs") + " --gt " + p("ds.gt.ivecs") +
                " --p-ivf 5 --out " + p("x.csv")), 2);
  EXPECT_EQ(run("search --index " + p("flat.ivf") + " --query " + p("ds.query.fvecs") + " --gt " + p("ds.gt.ivecs") +
                " --n-short 10,lots --out " + p("x.csv")), 2);
  EXPECT_NE(last_log().find("bad value 'lots'"), std::string::npos) << last_log();
}

TEST_F(Cli, ConfigFileSuppliesFlags) {
  {
    std::ofstream cfg(p("cfg.json"));
    cfg << R"({"M": 2, "K": 8, "L": 0, "epochs": 1, "batch-size": 256})";
  }
  ASSERT_EQ(run("--config " + p("cfg.json") + " train --data " + p("ds.learn.fvecs") + " --valid " + p("ds.valid.fvecs") +
                " --K 4 --out-model " + p("cfg.qinco")), 0) << last_log();
  const auto m = load_model(p("cfg.qinco"));
  EXPECT_EQ(m.steps(), 2u);
  EXPECT_EQ(m.codebook_size(), 4u);  // explicit flag wins
  EXPECT_EQ(m.config.blocks, 0u);
}

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  if (argc < 3) {
    std::fprintf(stderr, "usage: test_cli <qinco_cli> <work dir>\n");
    return 2;
  }
  g_cli = argv[1];
  g_work = argv[2];
  return RUN_ALL_TESTS();
}
