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

// Continuous-batching graph search.
//
// Every active request advances one extend per engine step: pick up to p
// unexpanded parents from its top-M list, read their neighbor rows, keep the
// ids not yet visited, and emit them as distance tasks. Tasks from all
// requests are concatenated (ascending request id) into fixed-capacity
// batches, the tail padded with masked dummies. Results are scattered back to
// their owners and merged into each top-M list. A request stops on its own
// when its list stops changing, so finished requests leave and new ones join
// at step granularity.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "pdvs/ann_graph.hpp"
#include "pdvs/common.hpp"

namespace pdvs::engine {

using RequestId = std::uint64_t;

/// Owner marker of a padding task.
inline constexpr RequestId kDummyOwner = std::numeric_limits<RequestId>::max();

struct EngineConfig {
  std::size_t m = 64;               ///< internal list size M
  std::size_t p = 2;                ///< parents selected per extend
  std::size_t entry_count = 8;      ///< strided seed entry points E
  std::size_t batch_capacity = 512; ///< fixed task slots C per distance batch
  std::size_t stop_streak = 8;      ///< consecutive unchanged extends before stopping
  std::size_t max_extends = 256;

  void validate() const {
    if (m < 1) throw InputError("engine.m must be >= 1");
    if (p < 1 || p > m) throw InputError("engine.p must lie in [1, m]");
    if (entry_count < 1 || entry_count > m) throw InputError("engine.entry_count must lie in [1, m]");
    if (batch_capacity < 1) throw InputError("engine.batch_capacity must be >= 1");
    if (stop_streak < 1) throw InputError("engine.stop_streak must be >= 1");
    if (max_extends < 1) throw InputError("engine.max_extends must be >= 1");
  }
};

struct CandidateEntry {
  VectorId id = 0;
  float dist = 0.0f;
  bool expanded = false;
};

enum class RequestStatus : std::uint8_t { active, converged, finished };

/// Exact membership set over database ids.
class VisitedSet {
 public:
  VisitedSet() = default;
  explicit VisitedSet(std::size_t universe) : bits_((universe + 63) / 64, 0) {}

  bool contains(VectorId id) const { return (bits_[id >> 6] >> (id & 63)) & 1U; }

  /// Returns true when `id` was not present before.
  bool insert(VectorId id) {
    auto& word = bits_[id >> 6];
    const std::uint64_t mask = std::uint64_t{1} << (id & 63);
    if (word & mask) return false;
    word |= mask;
    ++size_;
    return true;
  }

  std::size_t size() const noexcept { return size_; }

 private:
  std::vector<std::uint64_t> bits_;
  std::size_t size_ = 0;
};

struct SearchRequestState {
  RequestId request_id = 0;
  std::vector<float> query;
  std::vector<CandidateEntry> top_m;  // ascending (dist, id), length <= m
  std::size_t m = 0;
  VisitedSet visited;
  std::size_t extends_done = 0;
  RequestStatus status = RequestStatus::active;
  RetrievalStage stage = RetrievalStage::prefill;
  double t_arrival = 0.0;
  double deadline = 0.0;
  std::size_t k = 1;
  std::size_t no_change_streak = 0;
  std::size_t distance_evals = 0;  // batched evaluations only; seeds excluded
};

struct DistanceTask {
  RequestId owner = kDummyOwner;
  VectorId candidate = 0;

  bool is_dummy() const noexcept { return owner == kDummyOwner; }
};

struct TaskBatch {
  std::size_t capacity = 0;
  std::vector<DistanceTask> tasks;  // always exactly `capacity` entries
  std::size_t real_count = 0;
};

/// Candidates one request emitted during one extend.
struct Emission {
  RequestId owner = 0;
  std::vector<VectorId> candidates;
};

struct DistanceResult {
  RequestId owner = 0;
  VectorId candidate = 0;
  float dist = 0.0f;
};

struct MergeReport {
  bool changed = false;
  std::size_t inserted_count = 0;
};

/// Entry ids floor(i * n / e) for i in [0, e). `e` is clamped to n so ids stay distinct.
inline std::vector<VectorId> entry_points(std::size_t n_db, std::size_t e) {
  e = std::min(e, n_db);
  std::vector<VectorId> ids(e);
  for (std::size_t i = 0; i < e; ++i) ids[i] = static_cast<VectorId>(i * n_db / e);
  return ids;
}

inline SearchRequestState seed_request(std::span<const float> query, RetrievalStage stage,
                                       double t_arrival, double deadline, std::size_t k,
                                       const EngineConfig& config, const VectorStore& store,
                                       RequestId request_id = 0) {
  config.validate();
  if (query.size() != store.dim())
    throw InputError("seed_request: query dimension " + std::to_string(query.size()) +
                     " does not match store dimension " + std::to_string(store.dim()));
  if (k < 1 || k > config.m)
    throw InputError("seed_request: k=" + std::to_string(k) + " must lie in [1, m=" +
                     std::to_string(config.m) + "]");
  SearchRequestState s;
  s.request_id = request_id;
  s.query.assign(query.begin(), query.end());
  s.m = config.m;
  s.visited = VisitedSet(store.count());
  s.stage = stage;
  s.t_arrival = t_arrival;
  s.deadline = deadline;
  s.k = k;
  for (VectorId id : entry_points(store.count(), config.entry_count)) {
    s.visited.insert(id);
    s.top_m.push_back({id, distance(query, store.row(id)), false});
  }
  std::sort(s.top_m.begin(), s.top_m.end(), [](const CandidateEntry& a, const CandidateEntry& b) {
    return closer(a.dist, a.id, b.dist, b.id);
  });
  if (s.top_m.size() > s.m) s.top_m.resize(s.m);
  return s;
}

/// Up to `p` unexpanded ids from the head of top_m, best first. Does not mutate.
inline std::vector<VectorId> select_parents(const SearchRequestState& state, std::size_t p) {
  std::vector<VectorId> parents;
  for (const auto& e : state.top_m) {
    if (parents.size() == p) break;
    if (!e.expanded) parents.push_back(e.id);
  }
  return parents;
}

/// Reads each parent's neighbor row and returns the not-yet-visited ids.
/// Ids join `visited` at emission, so a neighbor shared by two parents is
/// emitted once. Every parent is marked expanded.
inline std::vector<VectorId> expand(SearchRequestState& state, const NeighborGraph& graph,
                                    std::span<const VectorId> parents) {
  std::vector<VectorId> emitted;
  for (VectorId parent : parents) {
    auto it = std::find_if(state.top_m.begin(), state.top_m.end(),
                           [parent](const CandidateEntry& e) { return e.id == parent; });
    if (it == state.top_m.end())
      throw ConsistencyError("expand: parent " + std::to_string(parent) + " not in top_m");
    if (it->expanded) throw ConsistencyError("expand: parent " + std::to_string(parent) + " already expanded");
    if (parent >= graph.rows()) throw ConsistencyError("expand: parent outside graph");
    for (VectorId nb : graph.neighbors(parent))
      if (state.visited.insert(nb)) emitted.push_back(nb);
    it->expanded = true;
  }
  return emitted;
}

/// Concatenates emissions in ascending owner order into batches of exactly
/// `capacity` tasks; only the last batch carries dummies. No emissions, no batches.
inline std::vector<TaskBatch> build_task_array(std::vector<Emission> emissions, std::size_t capacity) {
  if (capacity == 0) throw InputError("build_task_array: capacity must be >= 1");
  std::stable_sort(emissions.begin(), emissions.end(),
                   [](const Emission& a, const Emission& b) { return a.owner < b.owner; });
  std::vector<TaskBatch> batches;
  TaskBatch current{capacity, {}, 0};
  current.tasks.reserve(capacity);
  for (const auto& em : emissions) {
    for (VectorId c : em.candidates) {
      current.tasks.push_back({em.owner, c});
      if (++current.real_count == capacity) {
        batches.push_back(std::move(current));
        current = TaskBatch{capacity, {}, 0};
        current.tasks.reserve(capacity);
      }
    }
  }
  if (current.real_count > 0) {
    current.tasks.resize(capacity, DistanceTask{kDummyOwner, 0});
    batches.push_back(std::move(current));
  }
  return batches;
}

/// Evaluates the real tasks of one fixed-shape batch; dummies yield nothing.
/// `query_of(owner)` must return the owner's query vector.
template <typename QueryLookup>
std::vector<DistanceResult> execute_distance_batch(const TaskBatch& batch, const VectorStore& store,
                                                   QueryLookup&& query_of) {
  if (batch.tasks.size() != batch.capacity || batch.real_count > batch.capacity)
    throw ConsistencyError("execute_distance_batch: batch shape invariant violated");
  std::vector<DistanceResult> results;
  results.reserve(batch.real_count);
  for (const auto& task : batch.tasks) {
    if (task.is_dummy()) continue;
    if (task.candidate >= store.count())
      throw ConsistencyError("execute_distance_batch: candidate " + std::to_string(task.candidate) +
                             " out of range");
    std::span<const float> q = query_of(task.owner);
    results.push_back({task.owner, task.candidate, distance(q, store.row(task.candidate))});
  }
  return results;
}

/// Merges this request's results into top_m, keeping the best m by (dist, id).
inline MergeReport scatter_merge(SearchRequestState& state, std::span<const DistanceResult> results) {
  if (results.empty()) return {};
  std::vector<CandidateEntry> incoming;
  incoming.reserve(results.size());
  for (const auto& r : results) {
    if (r.owner != state.request_id)
      throw ConsistencyError("scatter_merge: result owned by another request");
    incoming.push_back({r.candidate, r.dist, false});
  }
  auto by_rank = [](const CandidateEntry& a, const CandidateEntry& b) {
    return closer(a.dist, a.id, b.dist, b.id);
  };
  std::sort(incoming.begin(), incoming.end(), by_rank);
  for (std::size_t i = 1; i < incoming.size(); ++i)
    if (incoming[i].id == incoming[i - 1].id)
      throw ConsistencyError("scatter_merge: duplicate candidate " + std::to_string(incoming[i].id));
  for (const auto& c : incoming)
    for (const auto& e : state.top_m)
      if (e.id == c.id)
        throw ConsistencyError("scatter_merge: candidate " + std::to_string(c.id) + " already in top_m");

  std::vector<CandidateEntry> merged;
  merged.reserve(std::min(state.m, state.top_m.size() + incoming.size()));
  MergeReport report;
  auto a = state.top_m.begin();
  auto b = incoming.begin();
  while (merged.size() < state.m && (a != state.top_m.end() || b != incoming.end())) {
    if (b == incoming.end() || (a != state.top_m.end() && by_rank(*a, *b))) {
      merged.push_back(*a++);
    } else {
      merged.push_back(*b++);
      ++report.inserted_count;
    }
  }
  report.changed = report.inserted_count > 0;
  state.top_m = std::move(merged);
  return report;
}

/// Updates the no-change streak from the latest merge and decides whether the
/// request is done. The caller increments extends_done before calling.
inline RequestStatus check_early_stop(SearchRequestState& state, const EngineConfig& config, bool changed) {
  state.no_change_streak = changed ? 0 : state.no_change_streak + 1;
  const bool any_unexpanded = std::any_of(state.top_m.begin(), state.top_m.end(),
                                          [](const CandidateEntry& e) { return !e.expanded; });
  if (state.no_change_streak >= config.stop_streak || !any_unexpanded ||
      state.extends_done >= config.max_extends)
    state.status = RequestStatus::converged;
  return state.status;
}

inline std::vector<Neighbor> finalize(SearchRequestState& state, std::size_t k) {
  if (state.status == RequestStatus::finished)
    throw MisuseError("finalize: request " + std::to_string(state.request_id) + " already finished");
  if (state.status != RequestStatus::converged)
    throw MisuseError("finalize: request " + std::to_string(state.request_id) + " has not converged");
  if (k > state.top_m.size())
    throw InputError("finalize: k=" + std::to_string(k) + " exceeds top_m size " +
                     std::to_string(state.top_m.size()));
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({state.top_m[i].id, state.top_m[i].dist});
  state.status = RequestStatus::finished;
  return out;
}

struct Completion {
  RequestId request_id = 0;
  RetrievalStage stage = RetrievalStage::prefill;
  std::vector<Neighbor> neighbors;
  std::size_t extends = 0;
  std::size_t distance_evals = 0;
};

struct StepReport {
  std::size_t batches_launched = 0;
  std::size_t requests_retired = 0;
  std::size_t requests_admitted = 0;
  std::size_t real_tasks = 0;
  std::vector<Completion> completions;

  bool empty() const noexcept {
    return batches_launched == 0 && requests_retired == 0 && requests_admitted == 0;
  }
};

/// Cumulative counters over an engine's lifetime.
struct EngineStats {
  std::size_t steps = 0;
  std::size_t batches_launched = 0;
  std::size_t all_dummy_batches = 0;
  std::size_t task_slots = 0;
  std::size_t real_tasks = 0;
  std::size_t emitted = 0;  // visited-admitted candidates across all requests
  std::size_t admitted = 0;
  std::size_t retired = 0;

  double fill_fraction() const noexcept {
    return task_slots == 0 ? 0.0 : static_cast<double>(real_tasks) / static_cast<double>(task_slots);
  }
};

/// Single-owner stepper. `admit` may be called from any thread; everything
/// else belongs to the thread that calls `step`. The store and graph must
/// outlive the engine.
class Engine {
 public:
  using BatchObserver = std::function<void(const TaskBatch&)>;

  Engine(const VectorStore& store, const NeighborGraph& graph, EngineConfig config)
      : store_(&store), graph_(&graph), config_(config) {
    config_.validate();
    if (graph.rows() != store.count())
      throw InputError("Engine: graph has " + std::to_string(graph.rows()) + " rows but store has " +
                       std::to_string(store.count()));
  }

  /// Queues a request for the next step and returns its id.
  RequestId admit(std::span<const float> query, RetrievalStage stage, double t_arrival, double deadline,
                  std::size_t k) {
    if (query.size() != store_->dim()) throw InputError("admit: query dimension mismatch");
    if (k < 1 || k > config_.m) throw InputError("admit: k must lie in [1, m]");
    std::lock_guard lock(admission_mu_);
    const RequestId id = next_id_++;
    pending_.push_back({id, std::vector<float>(query.begin(), query.end()), stage, t_arrival, deadline, k});
    return id;
  }

  void set_batch_observer(BatchObserver observer) { observer_ = std::move(observer); }

  /// Admits pending requests, then advances every active request by one extend.
  StepReport step() {
    StepReport report;
    {
      std::lock_guard lock(admission_mu_);
      for (auto& p : pending_) {
        active_.push_back(seed_request(p.query, p.stage, p.t_arrival, p.deadline, p.k, config_, *store_, p.id));
        ++report.requests_admitted;
      }
      pending_.clear();
    }
    if (active_.empty()) return report;
    ++stats_.steps;
    stats_.admitted += report.requests_admitted;

    std::vector<Emission> emissions;
    emissions.reserve(active_.size());
    for (auto& s : active_) {
      const auto parents = select_parents(s, config_.p);
      auto cands = expand(s, *graph_, parents);
      stats_.emitted += cands.size();
      if (!cands.empty()) emissions.push_back({s.request_id, std::move(cands)});
    }

    // active_ is kept in ascending id order, so results for each owner land
    // in one contiguous run.
    auto query_of = [this](RequestId owner) -> std::span<const float> { return state_of(owner).query; };
    std::vector<DistanceResult> results;
    for (const auto& batch : build_task_array(std::move(emissions), config_.batch_capacity)) {
      if (observer_) observer_(batch);
      ++stats_.batches_launched;
      ++report.batches_launched;
      stats_.task_slots += batch.capacity;
      stats_.real_tasks += batch.real_count;
      report.real_tasks += batch.real_count;
      if (batch.real_count == 0) ++stats_.all_dummy_batches;
      auto part = execute_distance_batch(batch, *store_, query_of);
      results.insert(results.end(), part.begin(), part.end());
    }

    std::size_t cursor = 0;
    std::vector<SearchRequestState> still_active;
    still_active.reserve(active_.size());
    for (auto& s : active_) {
      const std::size_t begin = cursor;
      while (cursor < results.size() && results[cursor].owner == s.request_id) ++cursor;
      s.distance_evals += cursor - begin;
      const auto merge = scatter_merge(s, std::span(results).subspan(begin, cursor - begin));
      ++s.extends_done;
      if (check_early_stop(s, config_, merge.changed) == RequestStatus::converged) {
        Completion c{s.request_id, s.stage, {}, s.extends_done, s.distance_evals};
        c.neighbors = finalize(s, std::min(s.k, s.top_m.size()));
        report.completions.push_back(std::move(c));
      } else {
        still_active.push_back(std::move(s));
      }
    }
    if (cursor != results.size()) throw ConsistencyError("engine step: unscattered results remain");
    active_ = std::move(still_active);
    report.requests_retired = report.completions.size();
    stats_.retired += report.requests_retired;
    return report;
  }

  std::size_t active_count() const noexcept { return active_.size(); }

  std::size_t pending_count() const {
    std::lock_guard lock(admission_mu_);
    return pending_.size();
  }

  bool idle() const { return active_.empty() && pending_count() == 0; }

  const EngineStats& stats() const noexcept { return stats_; }
  const EngineConfig& config() const noexcept { return config_; }
  std::span<const SearchRequestState> active_states() const noexcept { return active_; }

 private:
  struct Pending {
    RequestId id;
    std::vector<float> query;
    RetrievalStage stage;
    double t_arrival;
    double deadline;
    std::size_t k;
  };

  const SearchRequestState& state_of(RequestId id) const {
    auto it = std::lower_bound(active_.begin(), active_.end(), id,
                               [](const SearchRequestState& s, RequestId v) { return s.request_id < v; });
    if (it == active_.end() || it->request_id != id)
      throw ConsistencyError("engine: task references unknown request " + std::to_string(id));
    return *it;
  }

  const VectorStore* store_;
  const NeighborGraph* graph_;
  EngineConfig config_;
  BatchObserver observer_;
  mutable std::mutex admission_mu_;
  std::vector<Pending> pending_;
  RequestId next_id_ = 0;
  std::vector<SearchRequestState> active_;
  EngineStats stats_;
};

struct SearchResult {
  std::vector<Neighbor> neighbors;
  std::size_t extends = 0;
  std::size_t distance_evals = 0;
};

/// Runs one query alone through the same state machine until it converges.
inline SearchResult search_sequential(std::span<const float> query, const VectorStore& store,
                                      const NeighborGraph& graph, const EngineConfig& config, std::size_t k) {
  Engine engine(store, graph, config);
  engine.admit(query, RetrievalStage::prefill, 0.0, 0.0, k);
  for (;;) {
    auto report = engine.step();
    if (!report.completions.empty()) {
      auto& c = report.completions.front();
      return {std::move(c.neighbors), c.extends, c.distance_evals};
    }
  }
}

}  // namespace pdvs::engine
