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
#include <thread>
#include <vector>

#include "pdvs/rng.hpp"
#include "pdvs/scheduler.hpp"

using namespace pdvs;
using namespace pdvs::scheduler;

namespace {

QueueEntry pre(RequestId id, double t, double deadline_offset, double est = 0) {
  return QueueEntry::prefill(id, t, deadline_offset, est);
}

std::vector<RequestId> ids(const std::vector<QueueEntry>& v) {
  std::vector<RequestId> out;
  for (const auto& e : v) out.push_back(e.request_id);
  return out;
}

void fill(PrefillQueue& qp, DecodeQueue& qd, std::size_t n_pre, std::size_t n_dec) {
  for (std::size_t i = 0; i < n_pre; ++i) qp.push(pre(i, static_cast<double>(i), 100));
  for (std::size_t i = 0; i < n_dec; ++i) qd.push(QueueEntry::decode(1000 + i, static_cast<double>(i), 0));
}

}  // namespace

TEST(Slack, Examples) {
  // deadline = 0 + 100.
  EXPECT_EQ(slack(pre(1, 0, 100, 5), 40, 2), 50.0);
  EXPECT_EQ(slack(pre(1, 0, 100, 0), 40, 2), 60.0);
  EXPECT_EQ(slack(pre(1, 0, 100, 0), 130, 2), -30.0);
  EXPECT_THROW(slack(QueueEntry::decode(1, 0, 5), 0, 1), MisuseError);
}

TEST(ReservedSlots, CeilWithGuard) {
  EXPECT_EQ(reserved_slots(0.25, 8), 2u);
  EXPECT_EQ(reserved_slots(0.15, 20), 3u);  // 0.15*20 rounds to 3.0000000000000004
  EXPECT_EQ(reserved_slots(0.26, 8), 3u);
  EXPECT_EQ(reserved_slots(1.0, 8), 8u);
  EXPECT_EQ(reserved_slots(0.0, 8), 0u);
}

TEST(PopPrefill, OrdersBySlackThenArrival) {
  PrefillQueue q;
  q.push(pre(1, 0, 100, 5));   // slack at t=40, t_ext=2: 50
  q.push(pre(2, 0, 47, 5));    // 47 - 50 = -3
  EXPECT_EQ(ids(pop_prefill(q, 2, 40, 2)), (std::vector<RequestId>{2, 1}));

  q.push(pre(3, 5, 95));  // deadline 100
  q.push(pre(4, 1, 99));  // deadline 100, earlier arrival
  EXPECT_EQ(ids(pop_prefill(q, 5, 0, 1)), (std::vector<RequestId>{4, 3}));
  EXPECT_TRUE(q.empty());
}

TEST(PopDecode, Fifo) {
  DecodeQueue q;
  q.push(QueueEntry::decode(3, 3.0, 0));
  q.push(QueueEntry::decode(1, 1.0, 0));
  q.push(QueueEntry::decode(2, 2.0, 0));
  EXPECT_TRUE(pop_decode(q, 0).empty());
  EXPECT_EQ(q.size(), 3u);
  EXPECT_EQ(ids(pop_decode(q, 2)), (std::vector<RequestId>{1, 2}));
  EXPECT_EQ(ids(pop_decode(q, 5)), (std::vector<RequestId>{3}));
  EXPECT_TRUE(pop_decode(q, 1).empty());
}

TEST(BuildBatch, Examples) {
  {
    PrefillQueue qp;
    DecodeQueue qd;
    fill(qp, qd, 8, 8);
    const auto p = build_batch(qp, qd, 8, 0.25, 0, 1);
    EXPECT_EQ(p.n_pre, 2u);
    EXPECT_EQ(p.n_dec, 6u);
    EXPECT_EQ(p.pad_count, 0u);
  }
  {
    PrefillQueue qp;
    DecodeQueue qd;
    fill(qp, qd, 0, 3);
    const auto p = build_batch(qp, qd, 8, 0.5, 0, 1);
    EXPECT_EQ(p.n_pre, 0u);
    EXPECT_EQ(p.n_dec, 3u);
    EXPECT_EQ(p.pad_count, 5u);
  }
  {
    PrefillQueue qp;
    DecodeQueue qd;
    fill(qp, qd, 8, 0);
    const auto p = build_batch(qp, qd, 8, 0.25, 0, 1);
    EXPECT_EQ(p.n_pre, 8u);
    EXPECT_EQ(p.n_dec, 0u);
    EXPECT_EQ(p.pad_count, 0u);
  }
}

TEST(BuildBatchProperty, ReservationConservationAndOrder) {
  rng::CounterRng g(99);
  for (int trial = 0; trial < 2000; ++trial) {
    PrefillQueue qp;
    DecodeQueue qd;
    const auto n = static_cast<std::size_t>(g.uniform_int(1, 64));
    const double r = g.uniform();
    const auto np = g.uniform_int(0, 80), nd = g.uniform_int(0, 80);
    for (std::uint64_t i = 0; i < np; ++i) qp.push(pre(i, g.uniform() * 100, g.uniform() * 50, g.uniform_int(0, 20)));
    for (std::uint64_t i = 0; i < nd; ++i) qd.push(QueueEntry::decode(i, g.uniform() * 100, 0));
    const double t_now = 100, t_ext = g.uniform() * 3;
    const auto plan = build_batch(qp, qd, n, r, t_now, t_ext);
    const auto reserve = static_cast<std::size_t>(std::ceil(r * static_cast<double>(n) - 1e-9));
    ASSERT_EQ(plan.n_pre + plan.n_dec + plan.pad_count, n);
    if (np >= reserve) ASSERT_GE(plan.n_pre, std::min(reserve, n));
    for (std::size_t i = 1; i < plan.picked_prefill.size(); ++i)
      ASSERT_LE(slack(plan.picked_prefill[i - 1], t_now, t_ext), slack(plan.picked_prefill[i], t_now, t_ext));
    for (std::size_t i = 1; i < plan.picked_decode.size(); ++i)
      ASSERT_LE(plan.picked_decode[i - 1].t_arrival, plan.picked_decode[i].t_arrival);
    // Work-conserving: padding only when both queues ran dry.
    if (plan.pad_count > 0) ASSERT_TRUE(qp.empty() && qd.empty());
    ASSERT_EQ(qp.size() + plan.n_pre, np);
    ASSERT_EQ(qd.size() + plan.n_dec, nd);
  }
}

TEST(ShouldLaunch, Triggers) {
  PrefillQueue qp;
  DecodeQueue qd;
  EXPECT_FALSE(should_launch(qp, qd, 4, 2, 10, 0));
  qd.push(QueueEntry::decode(1, 0, 0));
  EXPECT_FALSE(should_launch(qp, qd, 4, 2, 10, 5));  // tau_pre elapsed but no prefill present
  EXPECT_TRUE(should_launch(qp, qd, 4, 2, 10, 10));
  EXPECT_EQ(next_timeout(qp, qd, 2, 10), 10.0);
  qp.push(pre(2, 3, 100));
  EXPECT_EQ(next_timeout(qp, qd, 2, 10), 5.0);
  EXPECT_TRUE(should_launch(qp, qd, 4, 2, 10, 5));
  EXPECT_TRUE(should_launch(qp, qd, 2, 2, 10, 3));  // full
}

TEST(ShouldLaunch, FiresExactlyAtNextTimeout) {
  rng::CounterRng g(5);
  for (int i = 0; i < 1000; ++i) {
    PrefillQueue qp;
    DecodeQueue qd;
    qp.push(pre(0, g.uniform() * 1e7, 500));
    const double tau = 0.1 + g.uniform() * 3;
    EXPECT_TRUE(should_launch(qp, qd, 64, tau, 10, *next_timeout(qp, qd, tau, 10)));
  }
}

TEST(ExtendLatency, Ema) {
  ExtendLatencyEstimator e(0.9);
  EXPECT_FALSE(e.estimate());
  EXPECT_EQ(e.record(2.0), 2.0);
  EXPECT_DOUBLE_EQ(e.record(4.0), 0.9 * 2.0 + 0.1 * 4.0);
  for (int i = 0; i < 500; ++i) e.record(7.0);
  EXPECT_NEAR(*e.estimate(), 7.0, 1e-12);
  EXPECT_THROW(e.record(0.0), InputError);
  EXPECT_THROW(ExtendLatencyEstimator(1.0), InputError);
}

TEST(ControlUpdate, Branches) {
  SchedulerConfig c;
  c.r = 0.25;
  const double tau0 = c.tau_pre;
  auto [r1, t1] = control_update({0, 0.5, 0, 0}, c);
  EXPECT_DOUBLE_EQ(r1, 0.30);
  EXPECT_DOUBLE_EQ(t1, tau0 * c.control.beta_tau);

  auto [r2, t2] = control_update({0, 0.9, 0, 0.4}, c);
  EXPECT_DOUBLE_EQ(r2, 0.25);
  EXPECT_EQ(t2, t1);

  auto [r3, t3] = control_update({0, 0.9, 0, 0.1}, c);
  EXPECT_EQ(r3, r2);
  EXPECT_EQ(t3, t2);

  EXPECT_THROW(control_update({0, 1.5, 0, 0}, c), InputError);
}

TEST(ControlUpdate, ClampsAtBounds) {
  SchedulerConfig c;
  c.r = c.r_max;
  control_update({0, 0.0, 0, 0}, c);
  EXPECT_EQ(c.r, c.r_max);
  c.r = c.r_min;
  control_update({0, 0.95, 0, 0.9}, c);
  EXPECT_EQ(c.r, c.r_min);
  for (int i = 0; i < 50; ++i) control_update({0, 0.0, 0, 0}, c);
  EXPECT_EQ(c.tau_pre, c.control.tau_pre_min);
}

TEST(RemainingExtends, Examples) {
  EXPECT_EQ(estimate_remaining_extends(std::nullopt, 12), 12.0);
  EXPECT_EQ(estimate_remaining_extends(12, 12), 0.0);
  EXPECT_EQ(estimate_remaining_extends(15, 12), 0.0);
}

TEST(SchedulerConfig, Validation) {
  SchedulerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.r = 0.9;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau_pre = 20;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "scheduler.tau_pre");
  }
}

TEST(RequestQueues, ConcurrentProducers) {
  RequestQueues q;
  std::vector<std::jthread> producers;
  for (int t = 0; t < 4; ++t)
    producers.emplace_back([&q, t] {
      for (int i = 0; i < 250; ++i) {
        const auto id = static_cast<RequestId>(t * 1000 + i);
        if (i % 2)
          q.push(QueueEntry::decode(id, i, 0));
        else
          q.push(QueueEntry::prefill(id, i, 10, 0));
      }
    });
  producers.clear();
  EXPECT_EQ(q.size(), 1000u);
  const auto plan = q.with_locked([](PrefillQueue& p, DecodeQueue& d) { return build_batch(p, d, 1000, 0.5, 0, 1); });
  EXPECT_EQ(plan.n_pre, 500u);
  EXPECT_EQ(plan.n_dec, 500u);
}
