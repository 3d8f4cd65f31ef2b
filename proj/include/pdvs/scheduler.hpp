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

#pragma once

// Two-queue admission for the vector-search pool.
//
// Prefill retrievals wait in an EDF queue ranked by slack; decode probes wait
// in a FIFO. Each launch fills N slots: at least ceil(r*N) go to prefill when
// prefill has that many waiting, decode takes the rest, unused shares flow to
// the other queue, and whatever is still empty is padded. A periodic control
// step moves r and the prefill flush timeout from KV-link and stall feedback.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdvs/common.hpp"

namespace pdvs::scheduler {

using RequestId = std::uint64_t;

struct QueueEntry {
  RequestId request_id = 0;
  RetrievalStage stage = RetrievalStage::prefill;
  double t_arrival = 0.0;
  std::optional<double> deadline;  // prefill only
  double est_remaining_extends = 0.0;
  std::size_t payload = 0;  // caller-side handle of the query vector

  static QueueEntry prefill(RequestId id, double t_arrival, double l_pre_max, double est_extends,
                            std::size_t payload = 0) {
    if (!(l_pre_max >= 0.0)) throw InputError("QueueEntry: l_pre_max must be >= 0");
    return {id, RetrievalStage::prefill, t_arrival, t_arrival + l_pre_max, est_extends, payload};
  }
  static QueueEntry decode(RequestId id, double t_arrival, double est_extends, std::size_t payload = 0) {
    return {id, RetrievalStage::decode, t_arrival, std::nullopt, est_extends, payload};
  }
};

struct ControlGains {
  double interval = 200000.0;  // 200 ms in microsecond time units
  double delta_r = 0.05;
  double beta_tau = 0.8;
  double tau_pre_min = 0.5;
  double u_kv_target = 0.9;
  double u_kv_margin = 0.05;
  double stall_target = 0.2;

  void validate() const {
    auto pos = [](double v, const char* key) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be > 0");
    };
    pos(interval, "scheduler.control.interval");
    pos(delta_r, "scheduler.control.delta_r");
    pos(beta_tau, "scheduler.control.beta_tau");
    pos(tau_pre_min, "scheduler.control.tau_pre_min");
    pos(u_kv_target, "scheduler.control.u_kv_target");
    pos(u_kv_margin, "scheduler.control.u_kv_margin");
    pos(stall_target, "scheduler.control.stall_target");
    if (!(beta_tau < 1.0)) throw ConfigError("scheduler.control.beta_tau", "must be < 1");
    if (u_kv_target > 1.0) throw ConfigError("scheduler.control.u_kv_target", "must be <= 1");
  }
};

struct SchedulerConfig {
  std::size_t slots_n = 64;
  double r = 0.25;
  double r_min = 0.05;
  double r_max = 0.75;
  double tau_pre = 2.0;
  double tau_global = 10.0;
  double gamma = 0.9;        // EMA weight of the previous per-extend latency
  double e0 = 12.0;          // prior on extends per search
  double l_pre_max = 500.0;  // prefill retrieval latency budget
  ControlGains control;

  void validate() const {
    if (slots_n < 1) throw ConfigError("scheduler.slots_n", "must be >= 1");
    if (!(0.0 <= r_min && r_min <= r_max && r_max <= 1.0))
      throw ConfigError("scheduler.r_min", "need 0 <= r_min <= r_max <= 1");
    if (!(r_min <= r && r <= r_max)) throw ConfigError("scheduler.r", "must lie in [r_min, r_max]");
    if (!(tau_pre > 0.0)) throw ConfigError("scheduler.tau_pre", "must be > 0");
    if (!(tau_global > 0.0)) throw ConfigError("scheduler.tau_global", "must be > 0");
    if (tau_pre > tau_global) throw ConfigError("scheduler.tau_pre", "must be <= tau_global");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("scheduler.gamma", "must lie in (0, 1)");
    if (!(e0 >= 0.0)) throw ConfigError("scheduler.e0", "must be >= 0");
    if (!(l_pre_max > 0.0)) throw ConfigError("scheduler.l_pre_max", "must be > 0");
    control.validate();
    if (control.tau_pre_min > tau_pre) throw ConfigError("scheduler.control.tau_pre_min", "must be <= tau_pre");
  }
};

/// ceil(r * n) clamped to n. The 1e-9 guard keeps values such as 0.15 * 20
/// (3.0000000000000004 in binary) from rounding up a whole slot.
inline std::size_t reserved_slots(double r, std::size_t n) {
  const double raw = std::ceil(r * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, raw)));
}

/// deadline - (t_now + est_remaining_extends * t_ext). Negative means late.
inline double slack(const QueueEntry& entry, double t_now, double t_ext) {
  if (entry.stage != RetrievalStage::prefill || !entry.deadline)
    throw MisuseError("slack: only prefill entries carry a deadline");
  return *entry.deadline - (t_now + entry.est_remaining_extends * t_ext);
}

/// Prefill queue; ordered by slack at pop time.
class PrefillQueue {
 public:
  void push(QueueEntry e) {
    if (e.stage != RetrievalStage::prefill || !e.deadline)
      throw MisuseError("PrefillQueue: entry must be a prefill entry with a deadline");
    if (*e.deadline < e.t_arrival) throw InputError("PrefillQueue: deadline precedes arrival");
    if (e.est_remaining_extends < 0.0) throw InputError("PrefillQueue: negative extend estimate");
    entries_.push_back(std::move(e));
  }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<QueueEntry>& entries() const noexcept { return entries_; }

  std::optional<double> oldest_arrival() const {
    if (entries_.empty()) return std::nullopt;
    double t = entries_.front().t_arrival;
    for (const auto& e : entries_) t = std::min(t, e.t_arrival);
    return t;
  }

 private:
  friend std::vector<QueueEntry> pop_prefill(PrefillQueue&, std::size_t, double, double);
  std::vector<QueueEntry> entries_;
};

/// Decode queue in arrival order (ties by request id).
class DecodeQueue {
 public:
  void push(QueueEntry e) {
    if (e.stage != RetrievalStage::decode) throw MisuseError("DecodeQueue: entry must be a decode entry");
    auto pos = std::upper_bound(entries_.begin(), entries_.end(), e, [](const QueueEntry& a, const QueueEntry& b) {
      return a.t_arrival < b.t_arrival || (a.t_arrival == b.t_arrival && a.request_id < b.request_id);
    });
    entries_.insert(pos, std::move(e));
  }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<QueueEntry>& entries() const noexcept { return entries_; }
  std::optional<double> oldest_arrival() const {
    if (entries_.empty()) return std::nullopt;
    return entries_.front().t_arrival;
  }

 private:
  friend std::vector<QueueEntry> pop_decode(DecodeQueue&, std::size_t);
  std::deque<QueueEntry> entries_;
};

/// Removes up to `count` entries, least slack first; ties by arrival, then id.
inline std::vector<QueueEntry> pop_prefill(PrefillQueue& queue, std::size_t count, double t_now, double t_ext) {
  auto& v = queue.entries_;
  count = std::min(count, v.size());
  if (count == 0) return {};
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) keys.emplace_back(slack(v[i], t_now, t_ext), i);
  auto before = [&](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
    if (a.first != b.first) return a.first < b.first;
    const auto& ea = v[a.second];
    const auto& eb = v[b.second];
    if (ea.t_arrival != eb.t_arrival) return ea.t_arrival < eb.t_arrival;
    return ea.request_id < eb.request_id;
  };
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(), before);
  std::vector<QueueEntry> out;
  std::vector<bool> taken(v.size(), false);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(v[keys[i].second]);
    taken[keys[i].second] = true;
  }
  std::vector<QueueEntry> rest;
  rest.reserve(v.size() - count);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!taken[i]) rest.push_back(std::move(v[i]));
  v = std::move(rest);
  return out;
}

inline std::vector<QueueEntry> pop_decode(DecodeQueue& queue, std::size_t count) {
  auto& q = queue.entries_;
  count = std::min(count, q.size());
  std::vector<QueueEntry> out(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(count));
  q.erase(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

struct BatchPlan {
  std::vector<QueueEntry> picked_prefill;
  std::vector<QueueEntry> picked_decode;
  std::size_t pad_count = 0;
  std::size_t n_pre = 0;
  std::size_t n_dec = 0;
};

/// Fills `slots` entries: prefill reservation first, then decode FIFO, then
/// any prefill surplus, then dummies.
inline BatchPlan build_batch(PrefillQueue& q_pre, DecodeQueue& q_dec, std::size_t slots, double r, double t_now,
                             double t_ext) {
  const std::size_t reservation = reserved_slots(r, slots);
  const std::size_t pre_reserved = std::min(q_pre.size(), reservation);
  const std::size_t dec = std::min(q_dec.size(), slots - pre_reserved);
  const std::size_t pre_extra = std::min(q_pre.size() - pre_reserved, slots - pre_reserved - dec);

  BatchPlan plan;
  plan.picked_prefill = pop_prefill(q_pre, pre_reserved + pre_extra, t_now, t_ext);
  plan.picked_decode = pop_decode(q_dec, dec);
  plan.n_pre = plan.picked_prefill.size();
  plan.n_dec = plan.picked_decode.size();
  plan.pad_count = slots - plan.n_pre - plan.n_dec;
  return plan;
}

inline BatchPlan build_batch(PrefillQueue& q_pre, DecodeQueue& q_dec, const SchedulerConfig& config, double t_now,
                             double t_ext) {
  return build_batch(q_pre, q_dec, config.slots_n, config.r, t_now, t_ext);
}

/// Launch when `slots` entries are waiting, the oldest prefill entry has
/// waited tau_pre, or the oldest entry of either queue has waited tau_global.
inline bool should_launch(const PrefillQueue& q_pre, const DecodeQueue& q_dec, std::size_t slots, double tau_pre,
                          double tau_global, double t_now) {
  if (q_pre.empty() && q_dec.empty()) return false;
  if (q_pre.size() + q_dec.size() >= slots) return true;
  const auto pre = q_pre.oldest_arrival();
  const auto dec = q_dec.oldest_arrival();
  // Same arithmetic as next_timeout so a wakeup at that instant always fires.
  if (pre && t_now >= *pre + tau_pre) return true;
  const double oldest = std::min(pre.value_or(INFINITY), dec.value_or(INFINITY));
  return t_now >= oldest + tau_global;
}

inline bool should_launch(const PrefillQueue& q_pre, const DecodeQueue& q_dec, const SchedulerConfig& config,
                          double t_now) {
  return should_launch(q_pre, q_dec, config.slots_n, config.tau_pre, config.tau_global, t_now);
}

/// Earliest time at which should_launch turns true by a timeout alone.
inline std::optional<double> next_timeout(const PrefillQueue& q_pre, const DecodeQueue& q_dec, double tau_pre,
                                          double tau_global) {
  const auto pre = q_pre.oldest_arrival();
  const auto dec = q_dec.oldest_arrival();
  if (!pre && !dec) return std::nullopt;
  double t = std::min(pre.value_or(INFINITY), dec.value_or(INFINITY)) + tau_global;
  if (pre) t = std::min(t, *pre + tau_pre);
  return t;
}

/// Exponential moving average of the observed per-extend latency.
class ExtendLatencyEstimator {
 public:
  explicit ExtendLatencyEstimator(double gamma = 0.9) : gamma_(gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("ExtendLatencyEstimator: gamma must lie in (0, 1)");
  }

  double record(double observed) {
    if (!(observed > 0.0) || !std::isfinite(observed))
      throw InputError("record_extend_latency: observation must be > 0");
    t_ext_ = t_ext_ ? gamma_ * *t_ext_ + (1.0 - gamma_) * observed : observed;
    return *t_ext_;
  }

  std::optional<double> estimate() const noexcept { return t_ext_; }
  double value_or(double fallback) const noexcept { return t_ext_.value_or(fallback); }

 private:
  double gamma_;
  std::optional<double> t_ext_;
};

struct FeedbackSample {
  double window_end = 0.0;
  double u_kv = 0.0;
  double prefill_wait_p95 = 0.0;
  double decode_stall_fraction = 0.0;

  void validate() const {
    if (!(u_kv >= 0.0 && u_kv <= 1.0)) throw InputError("FeedbackSample: u_kv must lie in [0, 1]");
    if (!(prefill_wait_p95 >= 0.0)) throw InputError("FeedbackSample: prefill_wait_p95 must be >= 0");
    if (!(decode_stall_fraction >= 0.0 && decode_stall_fraction <= 1.0))
      throw InputError("FeedbackSample: decode_stall_fraction must lie in [0, 1]");
  }
};

/// One control period. Low KV-link utilization wins: raise r and shrink
/// tau_pre. Otherwise excessive decode stall lowers r. Returns (r, tau_pre).
inline std::pair<double, double> control_update(const FeedbackSample& sample, SchedulerConfig& config) {
  sample.validate();
  const auto& g = config.control;
  constexpr double kSnap = 1e-12;
  if (sample.u_kv < g.u_kv_target - g.u_kv_margin) {
    config.r = config.r + g.delta_r >= config.r_max - kSnap ? config.r_max : config.r + g.delta_r;
    config.tau_pre = std::max(g.tau_pre_min, g.beta_tau * config.tau_pre);
  } else if (sample.decode_stall_fraction > g.stall_target) {
    config.r = config.r - g.delta_r <= config.r_min + kSnap ? config.r_min : config.r - g.delta_r;
  }
  return {config.r, config.tau_pre};
}

/// Prior e0 for queued requests; e0 minus progress (floored at 0) once started.
inline double estimate_remaining_extends(std::optional<std::size_t> extends_done, double e0) {
  if (!extends_done) return e0;
  return std::max(0.0, e0 - static_cast<double>(*extends_done));
}

/// Both queues behind one lock so producers may enqueue concurrently with the
/// scheduler owner.
class RequestQueues {
 public:
  void push(QueueEntry e) {
    std::lock_guard lock(mu_);
    if (e.stage == RetrievalStage::prefill)
      pre_.push(std::move(e));
    else
      dec_.push(std::move(e));
  }

  template <typename Fn>
  decltype(auto) with_locked(Fn&& fn) {
    std::lock_guard lock(mu_);
    return fn(pre_, dec_);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return pre_.size() + dec_.size();
  }

 private:
  mutable std::mutex mu_;
  PrefillQueue pre_;
  DecodeQueue dec_;
};

}  // namespace pdvs::scheduler
