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

#include <cmath>
#include <vector>

#include "pdvs/rng.hpp"
#include "pdvs/workload.hpp"

using namespace pdvs;
using namespace pdvs::workload;

TEST(Rng, StreamIsPureFunctionOfSeed) {
  rng::CounterRng a(3), b(3), c(4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

namespace {

// Textbook SplitMix64: advance the state by the golden gamma, then finalize.
std::uint64_t splitmix64_first(std::uint64_t state) {
  std::uint64_t z = state + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

TEST(Rng, CounterConstructionOverSplitMix64) {
  // Published first output of SplitMix64 seeded with 0.
  ASSERT_EQ(splitmix64_first(0), 0xe220a8397b1dcdafULL);
  const std::uint64_t key = 0x1234;
  rng::CounterRng g(key);
  for (std::uint64_t c = 0; c < 5; ++c) EXPECT_EQ(g.next_u64(), splitmix64_first(key + splitmix64_first(c)));
  EXPECT_EQ(g.counter(), 5u);
}

TEST(Rng, DistributionMoments) {
  rng::CounterRng g(17);
  const int n = 200000;
  double su = 0, sg = 0, sg2 = 0, se = 0;
  for (int i = 0; i < n; ++i) {
    const double u = g.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = g.gaussian();
    sg += z;
    sg2 += z * z;
    se += g.exponential(4.0);
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sg / n, 0.0, 0.01);
  EXPECT_NEAR(sg2 / n, 1.0, 0.01);
  EXPECT_NEAR(se / n, 0.25, 0.003);
  double sgeo = 0;
  for (int i = 0; i < n; ++i) {
    const auto v = g.geometric(5.0);
    ASSERT_GE(v, 1u);
    sgeo += static_cast<double>(v);
  }
  EXPECT_NEAR(sgeo / n, 5.0, 0.05);
  for (int i = 0; i < 1000; ++i) {
    const auto v = g.uniform_int(3, 5);
    ASSERT_GE(v, 3u);
    ASSERT_LE(v, 5u);
  }
}

TEST(GenVectors, Deterministic) {
  EXPECT_EQ(gen_vectors(100, 8, 1), gen_vectors(100, 8, 1));
  EXPECT_FALSE(gen_vectors(100, 8, 1) == gen_vectors(100, 8, 2));
  const auto one = gen_vectors(1, 1, 9);
  EXPECT_EQ(one.count(), 1u);
  EXPECT_TRUE(std::isfinite(one.row(0)[0]));
  EXPECT_THROW(gen_vectors(0, 1, 1), InputError);
}

TEST(GenTrace, PoissonMeanInterArrival) {
  WorkloadSpec s;
  s.n_requests = 10000;
  s.arrival_rate = 0.25;
  s.n_db = 10;
  s.dim = 2;
  s.output_len = LengthDist::fixed(1);
  const auto t = gen_trace(s);
  ASSERT_EQ(t.requests.size(), 10000u);
  // Arrivals start after the first gap, so the mean gap is last / n.
  const double mean_gap = t.requests.back().arrival_time / 10000.0;
  EXPECT_NEAR(mean_gap, 4.0, 0.2);
  for (std::size_t i = 1; i < t.requests.size(); ++i)
    ASSERT_GT(t.requests[i].arrival_time, t.requests[i - 1].arrival_time);
}

TEST(GenTrace, LengthsAndQueryIds) {
  WorkloadSpec s;
  s.n_requests = 50;
  s.prompt_len = LengthDist::fixed(100);
  s.output_len = LengthDist::fixed(70);
  s.delta = 32;
  const auto t = gen_trace(s);
  std::size_t next = 0;
  for (const auto& r : t.requests) {
    EXPECT_EQ(r.prompt_len, 100u);
    EXPECT_EQ(r.output_len, 70u);
    ASSERT_EQ(r.query_ids.size(), 1u + 70 / 32);
    for (auto q : r.query_ids) EXPECT_EQ(q, next++);
  }
  EXPECT_EQ(t.queries.count(), next);
  EXPECT_EQ(t.queries.dim(), s.dim);

  s.output_len = LengthDist::fixed(31);
  for (const auto& r : gen_trace(s).requests) EXPECT_EQ(r.query_ids.size(), 1u);
}

TEST(GenTrace, PureFunctionOfSpec) {
  WorkloadSpec s;
  s.n_requests = 30;
  s.output_len = LengthDist::geometric(50);
  const auto a = gen_trace(s), b = gen_trace(s);
  ASSERT_EQ(a.requests.size(), b.requests.size());
  for (std::size_t i = 0; i < a.requests.size(); ++i) {
    EXPECT_EQ(a.requests[i].arrival_time, b.requests[i].arrival_time);
    EXPECT_EQ(a.requests[i].output_len, b.requests[i].output_len);
    EXPECT_EQ(a.requests[i].query_ids, b.requests[i].query_ids);
  }
  EXPECT_EQ(a.queries, b.queries);
}

TEST(WorkloadSpec, Validation) {
  WorkloadSpec s;
  s.delta = 0;
  EXPECT_THROW(s.validate(), InputError);
  s = {};
  s.arrival_rate = 0;
  EXPECT_THROW(s.validate(), InputError);
  s = {};
  s.prompt_len = LengthDist::uniform(5, 2);
  EXPECT_THROW(s.validate(), InputError);
}
