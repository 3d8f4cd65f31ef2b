/*
 * Copyright 2026 The pdvs Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"

using namespace pdvs;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "pdvs");
  std::ostringstream out, err;
  const int code = cli::run_subcommand(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pdvs_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.json") << R"({"workload": {"n_db": 1500, "n_requests": 12, "seed": 4},
                                             "index": {"degree": 12}})";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 64);
  EXPECT_NE(r.err.find("usage:"), std::string::npos);
  EXPECT_EQ(run({}).code, 64);
}

TEST_F(CliTest, MissingRequiredFlagNamesIt) {
  const auto r = run({"build-index", "--degree", "8", "--out", path("g.bin")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--vectors"), std::string::npos);
}

TEST_F(CliTest, RooflineCsv) {
  const auto r = run({"roofline", "--ai", "1", "--mem-bw", "6e11", "--peak-flops", "1.25e14", "--x-sat", "64", "--alpha",
                      "1", "--xs", "1:128:1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# u_max=" + format_double(6.0e11 / 1.25e14));
  std::getline(in, line);
  EXPECT_EQ(line, "x,u");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const auto comma = line.find(',');
    const double x = std::stod(line.substr(0, comma));
    const double u = std::stod(line.substr(comma + 1));
    EXPECT_EQ(u, std::min(0.0048, x / 64.0));
  }
  EXPECT_EQ(rows, 128u);
  EXPECT_EQ(run({"roofline", "--xs", "3,x"}).code, 2);
  EXPECT_EQ(run({"roofline", "--ai", "-1", "--xs", "1"}).code, 2);
}

TEST_F(CliTest, GenBuildSearchPipeline) {
  ASSERT_EQ(run({"gen", "--spec", path("small.json"), "--out-vectors", path("q.bin"), "--out-trace", path("t.jsonl"),
                 "--out-db", path("db.bin")})
                .code,
            0);
  std::istringstream trace(slurp(dir_ / "t.jsonl"));
  std::string line;
  std::size_t n = 0, next_q = 0;
  while (std::getline(trace, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["id"].get<std::size_t>(), n++);
    for (const auto& k : {"t_arrival", "prompt_len", "output_len", "delta", "query_ids"}) EXPECT_TRUE(j.contains(k));
    for (const auto& q : j["query_ids"]) EXPECT_EQ(q.get<std::size_t>(), next_q++);
  }
  EXPECT_EQ(n, 12u);
  EXPECT_EQ(io::read_vectors(path("q.bin")).count(), next_q);

  ASSERT_EQ(run({"build-index", "--vectors", path("db.bin"), "--degree", "12", "--out", path("g.bin")}).code, 0);
  const auto batch = run({"search", "--index", path("g.bin"), "--vectors", path("db.bin"), "--queries", path("q.bin"),
                          "--k", "5", "--mode", "batch"});
  const auto seq = run({"search", "--index", path("g.bin"), "--vectors", path("db.bin"), "--queries", path("q.bin"),
                        "--k", "5", "--mode", "sequential"});
  ASSERT_EQ(batch.code, 0) << batch.err;
  ASSERT_EQ(seq.code, 0) << seq.err;
  EXPECT_EQ(batch.out, seq.out);
  const auto first = nlohmann::json::parse(batch.out.substr(0, batch.out.find('\n')));
  EXPECT_EQ(first["query"], 0);
  EXPECT_EQ(first["ids"].size(), 5u);
  EXPECT_EQ(first["dists"].size(), 5u);
  EXPECT_GT(first["extends"].get<int>(), 0);

  EXPECT_EQ(run({"search", "--index", path("g.bin"), "--vectors", path("db.bin"), "--queries", path("q.bin"), "--k",
                 "99"})
                .code,
            2);
  EXPECT_EQ(run({"search", "--index", path("missing.bin"), "--vectors", path("db.bin"), "--queries", path("q.bin")}).code,
            2);
}

TEST_F(CliTest, SimWritesLayoutAndResolvedConfigIsClosed) {
  ASSERT_EQ(run({"sim", "--config", path("small.json"), "--arch", "pooled", "--seed", "9", "--out", path("a")}).code, 0);
  for (const auto& f : {"resolved_config", "metrics.json", "trace.jsonl", "requests.csv", "summary.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  const auto resolved = nlohmann::json::parse(slurp(dir_ / "a" / "resolved_config"));
  EXPECT_EQ(resolved["workload"]["seed"], 9);
  // Rerunning from the resolved config reproduces the artifacts.
  ASSERT_EQ(run({"sim", "--config", path("a/resolved_config"), "--arch", "pooled", "--out", path("b")}).code, 0);
  for (const auto& f : {"resolved_config", "metrics.json", "trace.jsonl", "requests.csv", "summary.csv"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, CompareWritesThreeRows) {
  ASSERT_EQ(run({"compare", "--config", path("small.json"), "--out", path("c")}).code, 0);
  const auto metrics = nlohmann::json::parse(slurp(dir_ / "c" / "metrics.json"));
  ASSERT_EQ(metrics.size(), 3u);
  EXPECT_EQ(metrics[0]["architecture"], "coupled");
  EXPECT_EQ(metrics[1]["architecture"], "prefill-coloc");
  EXPECT_EQ(metrics[2]["architecture"], "pooled");
  const auto summary = slurp(dir_ / "c" / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
}

TEST_F(CliTest, ConfigErrorsNameTheKey) {
  std::ofstream(dir_ / "bad.json") << R"({"engine": {"mm": 3}})";
  auto r = run({"sim", "--config", path("bad.json"), "--arch", "pooled", "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("engine.mm"), std::string::npos);
  std::ofstream(dir_ / "bad2.json") << R"({"latency_model": {"contention_factor": 0.5}})";
  r = run({"compare", "--config", path("bad2.json"), "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("latency_model.contention_factor"), std::string::npos);
  r = run({"sim", "--config", path("small.json"), "--arch", "ring", "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir_ / "x" / "metrics.json"));
}

TEST_F(CliTest, BenchEngine) {
  auto r = run({"bench-engine", "--config", path("small.json"), "--queries", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["sequential"]["distance_evals"], j["batch"]["distance_evals"]);
  for (const auto& k : {"tasks_per_second", "batches", "dummy_fraction", "mean_fill_fraction", "latency_p95_seconds"})
    EXPECT_TRUE(j["batch"].contains(k)) << k;

  r = run({"bench-engine", "--config", path("small.json"), "--queries", "256"});
  ASSERT_EQ(r.code, 0);
  j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["batch"]["mean_fill_fraction"].get<double>(), j["sequential"]["mean_fill_fraction"].get<double>());

  r = run({"bench-engine", "--config", path("small.json"), "--queries", "0"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["queries"], 0);
}
