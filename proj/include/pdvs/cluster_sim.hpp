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

// Discrete-event simulation of three placements of the vector-search GPUs
// under prefill/decode disaggregation:
//
//   coupled            vector GPU inside every prefill and decode server
//   prefill_colocated  vector GPUs on prefill servers, decode reaches them over the network
//   pooled             independent vector pool, everything over the network
//
// Requests retrieve once before prefill, ship their KV cache over a single
// store-and-forward link, then decode token by token with a blocking probe
// every `delta` tokens. Every retrieval runs the real continuous-batching
// engine, so service time is its extend count times the per-step cost.
//
// Time unit: microseconds. Bandwidths are bytes/s and compute is FLOP/s.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pdvs/ann_graph.hpp"
#include "pdvs/common.hpp"
#include "pdvs/engine.hpp"
#include "pdvs/roofline.hpp"
#include "pdvs/scheduler.hpp"
#include "pdvs/workload.hpp"

namespace pdvs::sim {

inline constexpr double kMicrosPerSecond = 1.0e6;

enum class Architecture : std::uint8_t { coupled, prefill_colocated, pooled };

inline constexpr Architecture kAllArchitectures[] = {Architecture::coupled, Architecture::prefill_colocated,
                                                     Architecture::pooled};

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::coupled: return "coupled";
    case Architecture::prefill_colocated: return "prefill-coloc";
    case Architecture::pooled: return "pooled";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "coupled") return Architecture::coupled;
  if (s == "prefill-coloc" || s == "prefill_colocated") return Architecture::prefill_colocated;
  if (s == "pooled") return Architecture::pooled;
  throw InputError("unknown architecture '" + std::string(s) + "' (expected coupled|prefill-coloc|pooled)");
}

/// Whether the vector GPUs share a server with the given LLM stage.
constexpr bool colocated_with(Architecture a, RetrievalStage stage) {
  switch (a) {
    case Architecture::coupled: return true;
    case Architecture::prefill_colocated: return stage == RetrievalStage::prefill;
    case Architecture::pooled: return false;
  }
  return false;
}

/// Interconnect and placement costs. Defaults are illustrative only.
struct LatencyModel {
  double intra_node_rtt = 5.0;
  double network_rtt = 50.0;
  double intra_node_bw = 3.0e11;
  double network_bw = 2.5e10;
  double tp_collective_per_layer = 10.0;
  double ep_dispatch_local = 300.0;
  double ep_dispatch_remote = 600.0;
  double contention_factor = 1.15;
  double kv_link_capacity = 2.5e10;
  double retrieval_payload = 40960.0;
  double query_payload = 4096.0;

  void validate() const {
    auto nonneg = [](double v, const char* key) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be finite and >= 0");
    };
    auto pos = [](double v, const char* key) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be finite and > 0");
    };
    nonneg(intra_node_rtt, "latency_model.intra_node_rtt");
    nonneg(network_rtt, "latency_model.network_rtt");
    pos(intra_node_bw, "latency_model.intra_node_bw");
    pos(network_bw, "latency_model.network_bw");
    nonneg(tp_collective_per_layer, "latency_model.tp_collective_per_layer");
    nonneg(ep_dispatch_local, "latency_model.ep_dispatch_local");
    nonneg(ep_dispatch_remote, "latency_model.ep_dispatch_remote");
    pos(kv_link_capacity, "latency_model.kv_link_capacity");
    nonneg(retrieval_payload, "latency_model.retrieval_payload");
    nonneg(query_payload, "latency_model.query_payload");
    if (!(contention_factor >= 1.0) || !std::isfinite(contention_factor))
      throw ConfigError("latency_model.contention_factor", "must be >= 1");
    if (intra_node_rtt > network_rtt) throw ConfigError("latency_model.intra_node_rtt", "must be <= network_rtt");
  }
};

/// LLM and ANN cost constants shared by all architectures.
struct ModelParams {
  roofline::StageRooflineParams prefill = roofline::default_params(roofline::Stage::prefill);
  roofline::StageRooflineParams decode = roofline::default_params(roofline::Stage::decode);
  roofline::StageRooflineParams ann = roofline::default_params(roofline::Stage::ann);
  double prefill_flops_per_token = 1.4e10;
  std::size_t layers = 32;
  double decode_bytes_per_step = 1.6e10;
  double kv_bytes_per_token = 131072.0;
  double ann_flops_per_task = 48.0;
  double ann_launch_overhead = 2.0;
  double ann_step_overhead = 3.0;
  std::size_t top_k = 10;

  void validate() const {
    auto pos = [](double v, const char* key) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be finite and > 0");
    };
    auto nonneg = [](double v, const char* key) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be finite and >= 0");
    };
    prefill.validate();
    decode.validate();
    ann.validate();
    pos(prefill_flops_per_token, "model.prefill_flops_per_token");
    pos(decode_bytes_per_step, "model.decode_bytes_per_step");
    pos(kv_bytes_per_token, "model.kv_bytes_per_token");
    pos(ann_flops_per_task, "model.ann_flops_per_task");
    nonneg(ann_launch_overhead, "model.ann_launch_overhead");
    nonneg(ann_step_overhead, "model.ann_step_overhead");
    if (top_k < 1) throw ConfigError("model.top_k", "must be >= 1");
  }
};

/// Prompt compute at the occupancy-dependent roofline rate plus TP collectives.
inline double prefill_duration(double prompt_tokens, double occupancy, const roofline::StageRooflineParams& params,
                               double flops_per_token, std::size_t layers, double tp_collective_per_layer) {
  if (!(prompt_tokens >= 1.0)) throw InputError("prefill_duration: prompt_len must be >= 1");
  const double u = roofline::utilization(std::max(occupancy, 1.0), params);
  return prompt_tokens * flops_per_token / (params.peak_flops * u) * kMicrosPerSecond +
         static_cast<double>(layers) * tp_collective_per_layer;
}

struct DecodeStepCost {
  double total = 0.0;
  double contention_extra = 0.0;  // part of `total` caused by a busy co-located vector GPU
};

/// Memory-bound step time (bytes / bandwidth at the plateau, slower below it)
/// plus the EP dispatch term for the architecture.
inline DecodeStepCost decode_step_cost(double occupancy, const roofline::StageRooflineParams& params,
                                       double bytes_per_step, Architecture arch, bool vector_gpu_active,
                                       const LatencyModel& lm) {
  const double plateau = roofline::u_max(params);
  const double u = roofline::utilization(std::max(occupancy, 1.0), params);
  const double base = bytes_per_step / (params.mem_bw * (u / plateau)) * kMicrosPerSecond;
  const bool contended = arch == Architecture::coupled && vector_gpu_active;
  const double scaled = contended ? base * lm.contention_factor : base;
  const double ep = arch == Architecture::coupled ? lm.ep_dispatch_remote : lm.ep_dispatch_local;
  return {scaled + ep, scaled - base};
}

inline double decode_token_duration(double occupancy, const roofline::StageRooflineParams& params,
                                    double bytes_per_step, Architecture arch, bool vector_gpu_active,
                                    const LatencyModel& lm) {
  return decode_step_cost(occupancy, params, bytes_per_step, arch, vector_gpu_active, lm).total;
}

struct PathLatency {
  double dispatch = 0.0;  // LLM side -> vector GPU
  double ret = 0.0;       // vector GPU -> LLM side
};

inline PathLatency retrieval_path_latency(Architecture arch, RetrievalStage stage, const LatencyModel& lm) {
  const bool local = colocated_with(arch, stage);
  const double rtt = local ? lm.intra_node_rtt : lm.network_rtt;
  const double bw = local ? lm.intra_node_bw : lm.network_bw;
  return {rtt / 2.0 + lm.query_payload / bw * kMicrosPerSecond,
          rtt / 2.0 + lm.retrieval_payload / bw * kMicrosPerSecond};
}

/// Wall time of one full fixed-shape distance batch at the ANN roofline rate.
inline double ann_batch_time(std::size_t capacity, const ModelParams& model) {
  const double cap = static_cast<double>(capacity);
  const double u = roofline::utilization(cap, model.ann);
  return cap * model.ann_flops_per_task / (model.ann.peak_flops * u) * kMicrosPerSecond + model.ann_launch_overhead;
}

struct SimConfig {
  LatencyModel latency;
  ModelParams model;
  scheduler::SchedulerConfig scheduler;
  engine::EngineConfig engine;
  double max_time = 1.0e12;
  bool capture_trace = true;

  void validate() const {
    latency.validate();
    model.validate();
    scheduler.validate();
    engine.validate();
    if (model.top_k > engine.m) throw ConfigError("model.top_k", "must be <= engine.m");
    if (!(max_time > 0.0)) throw ConfigError("sim.max_time", "must be > 0");
  }
};

/// Everything a run needs besides the architecture; shareable across runs.
struct SimSetup {
  workload::Trace trace;
  VectorStore store;
  NeighborGraph graph;
};

inline SimSetup prepare(workload::WorkloadSpec spec, std::size_t degree) {
  spec.validate();
  SimSetup s;
  s.trace = workload::gen_trace(spec);
  s.store = workload::gen_database(spec);
  s.graph = build_search_graph(s.store, degree);
  return s;
}

struct RequestRecord {
  std::uint64_t id = 0;
  double arrival = 0.0;
  std::uint64_t prompt_len = 0;
  std::uint64_t output_len = 0;
  double ttft = std::numeric_limits<double>::quiet_NaN();
  double decode_start = std::numeric_limits<double>::quiet_NaN();
  double completion = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_token_times;
  double retrieval_stall = 0.0;
  double contention_stall = 0.0;
  std::size_t probes = 0;
  bool completed = false;

  double stall_time() const noexcept { return retrieval_stall + contention_stall; }
};

struct SimMetrics {
  std::string architecture;
  std::size_t n_requests = 0;
  std::size_t completed = 0;
  bool saturated = false;
  double makespan = 0.0;
  double ttft_p50 = 0.0;
  double ttft_p95 = 0.0;
  double ttft_mean = 0.0;
  double tpt_mean = 0.0;
  double decode_stall_fraction = 0.0;
  double u_kv = 0.0;
  double retrieval_latency_prefill_p50 = 0.0;
  double retrieval_latency_prefill_p95 = 0.0;
  double retrieval_latency_decode_p50 = 0.0;
  double retrieval_latency_decode_p95 = 0.0;
  double prefill_wait_p95 = 0.0;
  double prefill_deadline_miss_fraction = 0.0;
  double mean_extends = 0.0;
  std::size_t retrievals = 0;
  std::size_t pool_steps = 0;
  std::size_t pool_batches = 0;
  double pool_fill_fraction = 0.0;
  std::size_t launches = 0;
  std::size_t control_ticks = 0;
  double final_r = 0.0;
  double final_tau_pre = 0.0;
};

struct SimResult {
  SimMetrics metrics;
  std::vector<RequestRecord> requests;
  std::string trace_jsonl;
  std::string scheduler_jsonl;
};

/// Nearest-rank percentile; 0 for an empty sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

enum class EventKind : std::uint8_t {
  retrieval_complete,
  pool_step_done,
  prefill_done,
  decode_token_done,
  kv_transfer_complete,
  retrieval_dispatch,
  batch_launch,
  arrival,
  control_tick,
};

/// Tie-break among simultaneous events.
constexpr int event_rank(EventKind k) {
  switch (k) {
    case EventKind::retrieval_complete: return 0;
    case EventKind::pool_step_done:
    case EventKind::prefill_done:
    case EventKind::decode_token_done: return 1;
    case EventKind::kv_transfer_complete: return 2;
    case EventKind::retrieval_dispatch: return 3;
    case EventKind::batch_launch: return 4;
    case EventKind::arrival: return 5;
    case EventKind::control_tick: return 6;
  }
  return 7;
}

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::retrieval_complete: return "retrieval-complete";
    case EventKind::pool_step_done: return "pool-step-complete";
    case EventKind::prefill_done: return "prefill-complete";
    case EventKind::decode_token_done: return "decode-token";
    case EventKind::kv_transfer_complete: return "kv-transfer-complete";
    case EventKind::retrieval_dispatch: return "retrieval-dispatch";
    case EventKind::batch_launch: return "batch-launch";
    case EventKind::arrival: return "arrival";
    case EventKind::control_tick: return "control-tick";
  }
  return "?";
}

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::arrival;
  std::uint64_t seq = 0;
  std::size_t subject = 0;

  bool operator>(const Event& o) const {
    if (t != o.t) return t > o.t;
    if (event_rank(kind) != event_rank(o.kind)) return event_rank(kind) > event_rank(o.kind);
    return seq > o.seq;
  }
};

/// Time-ordered event queue; ties by (rank, insertion sequence).
class EventQueue {
 public:
  void push(double t, EventKind kind, std::size_t subject) { q_.push(Event{t, kind, seq_++, subject}); }
  bool empty() const { return q_.empty(); }
  Event pop() {
    Event e = q_.top();
    q_.pop();
    return e;
  }
  const Event& top() const { return q_.top(); }

 private:
  std::priority_queue<Event, std::vector<Event>, std::greater<>> q_;
  std::uint64_t seq_ = 0;
};

namespace detail {

/// Integral of a piecewise-constant level over time.
struct LevelIntegral {
  double level = 0.0;
  double total = 0.0;
  void advance(double dt) { total += level * dt; }
};

class Simulator {
 public:
  Simulator(const SimSetup& setup, Architecture arch, const SimConfig& config)
      : setup_(setup),
        arch_(arch),
        cfg_(config),
        sched_(config.scheduler),
        t_ext_(config.scheduler.gamma),
        engine_(setup.store, setup.graph, config.engine),
        batch_time_(ann_batch_time(config.engine.batch_capacity, config.model)) {
    cfg_.validate();
    if (setup.trace.queries.dim() != setup.store.dim())
      throw InputError("simulate: query and store dimensions differ");
    reqs_.resize(setup.trace.requests.size());
    for (std::size_t i = 0; i < reqs_.size(); ++i) {
      const auto& src = setup.trace.requests[i];
      auto& r = reqs_[i].record;
      r.id = src.id;
      r.arrival = src.arrival_time;
      r.prompt_len = src.prompt_len;
      r.output_len = src.output_len;
    }
  }

  SimResult run() {
    for (std::size_t i = 0; i < reqs_.size(); ++i)
      events_.push(setup_.trace.requests[i].arrival_time, EventKind::arrival, i);
    if (!reqs_.empty()) events_.push(cfg_.scheduler.control.interval, EventKind::control_tick, 0);

    double t_end = 0.0;
    while (!events_.empty()) {
      if (events_.top().t > cfg_.max_time) break;
      const Event e = events_.pop();
      advance_to(e.t);
      t_end = e.t;
      dispatch(e);
    }
    return finish(t_end);
  }

 private:
  enum class Phase : std::uint8_t { retrieving, prefill, kv, decoding, stalled, done };

  struct ReqState {
    RequestRecord record;
    Phase phase = Phase::retrieving;
    std::uint64_t tokens = 0;
    double last_emit = 0.0;
    double stall_start = 0.0;
    double pending_contention = 0.0;
  };

  struct Job {
    std::size_t req = 0;
    RetrievalStage stage = RetrievalStage::prefill;
    std::size_t query = 0;
    double t_issue = 0.0;
    double t_pool = 0.0;
    double t_admit = 0.0;
    std::size_t extends = 0;
  };

  void advance_to(double t) {
    const double dt = t - now_;
    if (dt < 0.0) throw ConsistencyError("simulate: event scheduled in the past");
    kv_busy_.advance(dt);
    decoding_.advance(dt);
    stalled_.advance(dt);
    now_ = t;
  }

  void trace(const Event& e, nlohmann::json extra = nlohmann::json::object()) {
    if (!cfg_.capture_trace) return;
    nlohmann::json line = {{"t", e.t}, {"seq", e.seq}, {"event", to_string(e.kind)}};
    line.update(extra);
    trace_ += line.dump();
    trace_ += '\n';
  }

  void dispatch(const Event& e) {
    switch (e.kind) {
      case EventKind::arrival: on_arrival(e); break;
      case EventKind::retrieval_dispatch: on_retrieval_dispatch(e); break;
      case EventKind::batch_launch:
        trace(e);
        if (wake_at_ && *wake_at_ == e.t) wake_at_.reset();
        try_launch(e.t);
        break;
      case EventKind::pool_step_done: on_pool_step_done(e); break;
      case EventKind::retrieval_complete: on_retrieval_complete(e); break;
      case EventKind::prefill_done: on_prefill_done(e); break;
      case EventKind::kv_transfer_complete: on_kv_done(e); break;
      case EventKind::decode_token_done: on_token_done(e); break;
      case EventKind::control_tick: on_control_tick(e); break;
    }
  }

  void issue_retrieval(std::size_t req, RetrievalStage stage, std::size_t query, double t) {
    const std::size_t job = jobs_.size();
    jobs_.push_back({req, stage, query, t, 0.0, 0.0, 0});
    events_.push(t + retrieval_path_latency(arch_, stage, cfg_.latency).dispatch, EventKind::retrieval_dispatch, job);
  }

  void on_arrival(const Event& e) {
    const auto& src = setup_.trace.requests[e.subject];
    trace(e, {{"req", src.id}});
    issue_retrieval(e.subject, RetrievalStage::prefill, src.query_ids.front(), e.t);
  }

  void on_retrieval_dispatch(const Event& e) {
    auto& job = jobs_[e.subject];
    job.t_pool = e.t;
    trace(e, {{"job", e.subject}, {"stage", to_string(job.stage)}});
    if (job.stage == RetrievalStage::prefill)
      q_pre_.push(scheduler::QueueEntry::prefill(e.subject, e.t, sched_.l_pre_max, sched_.e0, e.subject));
    else
      q_dec_.push(scheduler::QueueEntry::decode(e.subject, e.t, sched_.e0, e.subject));
    try_launch(e.t);
  }

  bool pool_active() const { return stepping_; }

  bool colocated_stage_busy() const {
    const bool prefill_busy = prefill_resident_ > 0;
    const bool decode_busy = decoding_.level > 0.0;
    switch (arch_) {
      case Architecture::coupled: return prefill_busy || decode_busy;
      case Architecture::prefill_colocated: return prefill_busy;
      case Architecture::pooled: return false;
    }
    return false;
  }

  void try_launch(double t) {
    if (stepping_) return;
    const std::size_t resident = engine_.active_count() + engine_.pending_count();
    const std::size_t free = sched_.slots_n > resident ? sched_.slots_n - resident : 0;
    if (free > 0 && scheduler::should_launch(q_pre_, q_dec_, free, sched_.tau_pre, sched_.tau_global, t)) {
      const double t_ext = t_ext_.value_or(0.0);
      const auto plan = scheduler::build_batch(q_pre_, q_dec_, free, sched_.r, t, t_ext);
      auto admit = [&](const scheduler::QueueEntry& entry) {
        auto& job = jobs_[entry.payload];
        job.t_admit = t;
        const auto id = engine_.admit(setup_.trace.queries.row(job.query), job.stage, job.t_pool,
                                      entry.deadline.value_or(0.0), cfg_.model.top_k);
        if (id != engine_jobs_.size()) throw ConsistencyError("simulate: engine id out of sequence");
        engine_jobs_.push_back(entry.payload);
      };
      for (const auto& entry : plan.picked_prefill) admit(entry);
      for (const auto& entry : plan.picked_decode) admit(entry);
      ++launches_;
      nlohmann::json rec = {{"t", t},     {"n_pre", plan.n_pre}, {"n_dec", plan.n_dec},
                            {"pad", plan.pad_count}, {"r", sched_.r},         {"tau_pre", sched_.tau_pre}};
      scheduler_log_ += rec.dump();
      scheduler_log_ += '\n';
    }
    if (!engine_.idle()) {
      const auto report = engine_.step();
      double dur = cfg_.model.ann_step_overhead + static_cast<double>(report.batches_launched) * batch_time_;
      if (colocated_stage_busy()) dur *= cfg_.latency.contention_factor;
      t_ext_.record(dur);
      pool_steps_ += 1;
      pool_batches_ += report.batches_launched;
      stepping_ = true;
      step_completions_ = report.completions;
      events_.push(t + dur, EventKind::pool_step_done, 0);
      return;
    }
    if (auto wake = scheduler::next_timeout(q_pre_, q_dec_, sched_.tau_pre, sched_.tau_global)) {
      const double at = std::max(*wake, t);
      if (!wake_at_ || at < *wake_at_) {
        wake_at_ = at;
        events_.push(at, EventKind::batch_launch, 0);
      }
    }
  }

  void on_pool_step_done(const Event& e) {
    stepping_ = false;
    trace(e, {{"retired", step_completions_.size()}});
    for (const auto& c : step_completions_) {
      const std::size_t job = engine_jobs_[c.request_id];
      jobs_[job].extends = c.extends;
      events_.push(e.t + retrieval_path_latency(arch_, jobs_[job].stage, cfg_.latency).ret,
                   EventKind::retrieval_complete, job);
    }
    step_completions_.clear();
    try_launch(e.t);
  }

  void on_retrieval_complete(const Event& e) {
    const auto& job = jobs_[e.subject];
    auto& r = reqs_[job.req];
    trace(e, {{"job", e.subject}, {"req", r.record.id}, {"stage", to_string(job.stage)}, {"extends", job.extends}});
    const double latency = e.t - job.t_issue;
    extends_total_ += job.extends;
    if (job.stage == RetrievalStage::prefill) {
      prefill_latency_.push_back(latency);
      const double wait = job.t_admit - job.t_pool;
      prefill_waits_.push_back(wait);
      window_prefill_waits_.push_back(wait);
      if (e.t > job.t_pool + sched_.l_pre_max) ++deadline_misses_;
      start_prefill(job.req, e.t);
    } else {
      decode_latency_.push_back(latency);
      r.record.retrieval_stall += e.t - r.stall_start;
      window_stall_ += e.t - r.stall_start;
      stalled_.level -= 1.0;
      r.phase = Phase::decoding;
      decoding_.level += 1.0;
      start_token(job.req, e.t);
    }
  }

  void start_prefill(std::size_t req, double t) {
    auto& r = reqs_[req];
    r.phase = Phase::prefill;
    ++prefill_resident_;
    const double dur = prefill_duration(static_cast<double>(r.record.prompt_len), static_cast<double>(prefill_resident_),
                                        cfg_.model.prefill, cfg_.model.prefill_flops_per_token, cfg_.model.layers,
                                        cfg_.latency.tp_collective_per_layer);
    events_.push(t + dur, EventKind::prefill_done, req);
  }

  void on_prefill_done(const Event& e) {
    auto& r = reqs_[e.subject];
    trace(e, {{"req", r.record.id}});
    --prefill_resident_;
    r.record.ttft = e.t - r.record.arrival;
    r.phase = Phase::kv;
    kv_fifo_.push_back(e.subject);
    if (!kv_busy_flag_) start_kv(e.t);
  }

  void start_kv(double t) {
    if (kv_fifo_.empty()) return;
    const std::size_t req = kv_fifo_.front();
    kv_fifo_.erase(kv_fifo_.begin());
    const double bytes = static_cast<double>(reqs_[req].record.prompt_len) * cfg_.model.kv_bytes_per_token;
    kv_busy_flag_ = true;
    kv_busy_.level = 1.0;
    events_.push(t + bytes / cfg_.latency.kv_link_capacity * kMicrosPerSecond, EventKind::kv_transfer_complete, req);
  }

  void on_kv_done(const Event& e) {
    auto& r = reqs_[e.subject];
    trace(e, {{"req", r.record.id}});
    kv_busy_flag_ = false;
    kv_busy_.level = 0.0;
    start_kv(e.t);
    r.record.decode_start = e.t;
    r.last_emit = e.t;
    r.phase = Phase::decoding;
    decoding_.level += 1.0;
    next_token_or_probe(e.subject, e.t);
  }

  // A probe precedes every token whose index is a multiple of delta.
  void next_token_or_probe(std::size_t req, double t) {
    auto& r = reqs_[req];
    const auto& src = setup_.trace.requests[req];
    if ((r.tokens + 1) % src.probe_interval == 0) {
      r.phase = Phase::stalled;
      decoding_.level -= 1.0;
      stalled_.level += 1.0;
      r.stall_start = t;
      ++r.record.probes;
      issue_retrieval(req, RetrievalStage::decode, src.query_ids.at(r.record.probes), t);
    } else {
      start_token(req, t);
    }
  }

  void start_token(std::size_t req, double t) {
    auto& r = reqs_[req];
    const auto cost = decode_step_cost(decoding_.level, cfg_.model.decode, cfg_.model.decode_bytes_per_step, arch_,
                                       pool_active(), cfg_.latency);
    r.pending_contention = cost.contention_extra;
    events_.push(t + cost.total, EventKind::decode_token_done, req);
  }

  void on_token_done(const Event& e) {
    auto& r = reqs_[e.subject];
    ++r.tokens;
    r.record.per_token_times.push_back(e.t - r.last_emit);
    r.last_emit = e.t;
    r.record.contention_stall += r.pending_contention;
    window_stall_ += r.pending_contention;
    r.pending_contention = 0.0;
    if (cfg_.capture_trace) trace(e, {{"req", r.record.id}, {"token", r.tokens}});
    if (r.tokens >= r.record.output_len) {
      r.phase = Phase::done;
      decoding_.level -= 1.0;
      r.record.completion = e.t;
      r.record.completed = true;
      ++completed_;
      return;
    }
    next_token_or_probe(e.subject, e.t);
  }

  void on_control_tick(const Event& e) {
    const double interval = cfg_.scheduler.control.interval;
    scheduler::FeedbackSample sample;
    sample.window_end = e.t;
    sample.u_kv = std::clamp((kv_busy_.total - kv_mark_) / interval, 0.0, 1.0);
    sample.prefill_wait_p95 = percentile(window_prefill_waits_, 0.95);
    const double decode_time = (decoding_.total - decode_mark_) + (stalled_.total - stalled_mark_);
    sample.decode_stall_fraction = decode_time > 0.0 ? std::clamp(window_stall_ / decode_time, 0.0, 1.0) : 0.0;
    kv_mark_ = kv_busy_.total;
    decode_mark_ = decoding_.total;
    stalled_mark_ = stalled_.total;
    window_stall_ = 0.0;
    window_prefill_waits_.clear();
    const auto [r, tau] = scheduler::control_update(sample, sched_);
    ++control_ticks_;
    trace(e, {{"u_kv", sample.u_kv},
              {"prefill_wait_p95", sample.prefill_wait_p95},
              {"decode_stall_fraction", sample.decode_stall_fraction},
              {"r", r},
              {"tau_pre", tau}});
    if (completed_ < reqs_.size()) events_.push(e.t + interval, EventKind::control_tick, 0);
  }

  SimResult finish(double t_end) {
    SimResult out;
    auto& m = out.metrics;
    m.architecture = std::string(to_string(arch_));
    m.n_requests = reqs_.size();
    m.completed = completed_;
    m.saturated = completed_ < reqs_.size();
    const double t0 = reqs_.empty() ? 0.0 : reqs_.front().record.arrival;
    double last_completion = t0;
    std::vector<double> ttfts;
    double tokens_time = 0.0, stall = 0.0, decode_wall = 0.0;
    std::size_t tokens = 0;
    for (auto& r : reqs_) {
      const auto& rec = r.record;
      if (std::isfinite(rec.ttft)) ttfts.push_back(rec.ttft);
      for (double x : rec.per_token_times) tokens_time += x;
      tokens += rec.per_token_times.size();
      if (rec.completed) {
        stall += rec.stall_time();
        decode_wall += rec.completion - rec.decode_start;
        last_completion = std::max(last_completion, rec.completion);
      }
      out.requests.push_back(rec);
    }
    m.makespan = (m.saturated ? t_end : last_completion) - t0;
    m.ttft_p50 = percentile(ttfts, 0.50);
    m.ttft_p95 = percentile(ttfts, 0.95);
    if (!ttfts.empty()) {
      double s = 0.0;
      for (double x : ttfts) s += x;
      m.ttft_mean = s / static_cast<double>(ttfts.size());
    }
    m.tpt_mean = tokens == 0 ? 0.0 : tokens_time / static_cast<double>(tokens);
    m.decode_stall_fraction = decode_wall > 0.0 ? std::clamp(stall / decode_wall, 0.0, 1.0) : 0.0;
    m.u_kv = m.makespan > 0.0 ? std::clamp(kv_busy_.total / m.makespan, 0.0, 1.0) : 0.0;
    m.retrieval_latency_prefill_p50 = percentile(prefill_latency_, 0.50);
    m.retrieval_latency_prefill_p95 = percentile(prefill_latency_, 0.95);
    m.retrieval_latency_decode_p50 = percentile(decode_latency_, 0.50);
    m.retrieval_latency_decode_p95 = percentile(decode_latency_, 0.95);
    m.prefill_wait_p95 = percentile(prefill_waits_, 0.95);
    m.prefill_deadline_miss_fraction =
        prefill_latency_.empty() ? 0.0 : static_cast<double>(deadline_misses_) / static_cast<double>(prefill_latency_.size());
    m.retrievals = prefill_latency_.size() + decode_latency_.size();
    m.mean_extends = m.retrievals == 0 ? 0.0 : static_cast<double>(extends_total_) / static_cast<double>(m.retrievals);
    m.pool_steps = pool_steps_;
    m.pool_batches = pool_batches_;
    m.pool_fill_fraction = engine_.stats().fill_fraction();
    m.launches = launches_;
    m.control_ticks = control_ticks_;
    m.final_r = sched_.r;
    m.final_tau_pre = sched_.tau_pre;
    out.trace_jsonl = std::move(trace_);
    out.scheduler_jsonl = std::move(scheduler_log_);
    return out;
  }

  const SimSetup& setup_;
  Architecture arch_;
  SimConfig cfg_;
  scheduler::SchedulerConfig sched_;
  scheduler::ExtendLatencyEstimator t_ext_;
  engine::Engine engine_;
  double batch_time_;

  EventQueue events_;
  double now_ = 0.0;
  std::vector<ReqState> reqs_;
  std::vector<Job> jobs_;
  std::vector<std::size_t> engine_jobs_;
  scheduler::PrefillQueue q_pre_;
  scheduler::DecodeQueue q_dec_;
  bool stepping_ = false;
  std::optional<double> wake_at_;
  std::vector<engine::Completion> step_completions_;
  std::size_t prefill_resident_ = 0;
  std::vector<std::size_t> kv_fifo_;
  bool kv_busy_flag_ = false;
  LevelIntegral kv_busy_, decoding_, stalled_;
  double kv_mark_ = 0.0, decode_mark_ = 0.0, stalled_mark_ = 0.0, window_stall_ = 0.0;
  std::vector<double> window_prefill_waits_;
  std::vector<double> prefill_latency_, decode_latency_, prefill_waits_;
  std::size_t deadline_misses_ = 0;
  std::size_t extends_total_ = 0;
  std::size_t completed_ = 0;
  std::size_t pool_steps_ = 0, pool_batches_ = 0, launches_ = 0, control_ticks_ = 0;
  std::string trace_;
  std::string scheduler_log_;
};

}  // namespace detail

/// Runs one architecture over a prepared setup. Deterministic: the only
/// inputs are the setup and the config.
inline SimResult simulate(const SimSetup& setup, Architecture arch, const SimConfig& config) {
  return detail::Simulator(setup, arch, config).run();
}

inline nlohmann::json to_json(const SimMetrics& m) {
  return {{"architecture", m.architecture},
          {"n_requests", m.n_requests},
          {"completed", m.completed},
          {"saturated", m.saturated},
          {"makespan", m.makespan},
          {"ttft_p50", m.ttft_p50},
          {"ttft_p95", m.ttft_p95},
          {"ttft_mean", m.ttft_mean},
          {"tpt_mean", m.tpt_mean},
          {"decode_stall_fraction", m.decode_stall_fraction},
          {"u_kv", m.u_kv},
          {"retrieval_latency_prefill_p50", m.retrieval_latency_prefill_p50},
          {"retrieval_latency_prefill_p95", m.retrieval_latency_prefill_p95},
          {"retrieval_latency_decode_p50", m.retrieval_latency_decode_p50},
          {"retrieval_latency_decode_p95", m.retrieval_latency_decode_p95},
          {"prefill_wait_p95", m.prefill_wait_p95},
          {"prefill_deadline_miss_fraction", m.prefill_deadline_miss_fraction},
          {"mean_extends", m.mean_extends},
          {"retrievals", m.retrievals},
          {"pool_steps", m.pool_steps},
          {"pool_batches", m.pool_batches},
          {"pool_fill_fraction", m.pool_fill_fraction},
          {"launches", m.launches},
          {"control_ticks", m.control_ticks},
          {"final_r", m.final_r},
          {"final_tau_pre", m.final_tau_pre}};
}

/// Numeric aggregates in a fixed order, for tables and equality checks.
inline std::vector<std::pair<std::string, double>> numeric_aggregates(const SimMetrics& m) {
  std::vector<std::pair<std::string, double>> out;
  const auto j = to_json(m);
  for (const auto& [key, value] : j.items())
    if (value.is_number()) out.emplace_back(key, value.get<double>());
  return out;
}

inline std::string summary_csv(const std::vector<SimMetrics>& rows) {
  std::string out = "architecture";
  if (rows.empty()) return out + "\n";
  const auto header = numeric_aggregates(rows.front());
  for (const auto& [key, _] : header) out += "," + key;
  out += "\n";
  for (const auto& m : rows) {
    out += m.architecture;
    for (const auto& [_, v] : numeric_aggregates(m)) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline std::string requests_csv(const std::vector<RequestRecord>& requests) {
  std::string out =
      "id,arrival,prompt_len,output_len,ttft,decode_start,completion,tokens,tpt_mean,probes,stall_time,"
      "retrieval_stall,contention_stall\n";
  for (const auto& r : requests) {
    double sum = 0.0;
    for (double x : r.per_token_times) sum += x;
    const double tpt = r.per_token_times.empty() ? 0.0 : sum / static_cast<double>(r.per_token_times.size());
    out += std::to_string(r.id) + "," + format_double(r.arrival) + "," + std::to_string(r.prompt_len) + "," +
           std::to_string(r.output_len) + "," + format_double(r.ttft) + "," + format_double(r.decode_start) + "," +
           format_double(r.completion) + "," + std::to_string(r.per_token_times.size()) + "," + format_double(tpt) +
           "," + std::to_string(r.probes) + "," + format_double(r.stall_time()) + "," +
           format_double(r.retrieval_stall) + "," + format_double(r.contention_stall) + "\n";
  }
  return out;
}

struct ComparisonRow {
  Architecture arch;
  SimResult result;
};

/// Runs all three architectures on the same setup. Runs are independent, so
/// they execute concurrently.
std::vector<ComparisonRow> compare_architectures(const SimSetup& setup, const SimConfig& config);

}  // namespace pdvs::sim

#include <future>

namespace pdvs::sim {

inline std::vector<ComparisonRow> compare_architectures(const SimSetup& setup, const SimConfig& config) {
  std::vector<std::future<SimResult>> runs;
  for (Architecture a : kAllArchitectures)
    runs.push_back(std::async(std::launch::async, [&setup, &config, a] { return simulate(setup, a, config); }));
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < runs.size(); ++i) rows.push_back({kAllArchitectures[i], runs[i].get()});
  return rows;
}

}  // namespace pdvs::sim
