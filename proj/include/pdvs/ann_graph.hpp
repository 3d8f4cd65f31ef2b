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

// Vector storage, exact kNN, and the fixed-degree neighbor graph walked by
// the search engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pdvs/common.hpp"

namespace pdvs {

using VectorId = std::uint32_t;

/// Row-major N x d matrix of finite floats.
class VectorStore {
 public:
  VectorStore() = default;

  VectorStore(std::size_t dim, std::vector<float> data) : dim_(dim), data_(std::move(data)) {
    if (dim_ == 0) throw InputError("VectorStore: dim must be >= 1");
    if (data_.empty() || data_.size() % dim_ != 0)
      throw InputError("VectorStore: data size must be a positive multiple of dim");
    for (float v : data_)
      if (!std::isfinite(v)) throw InputError("VectorStore: non-finite value");
    count_ = data_.size() / dim_;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return count_; }
  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> row(std::size_t i) const {
    if (i >= count_) throw InputError("VectorStore: row " + std::to_string(i) + " out of range");
    return {data_.data() + i * dim_, dim_};
  }

  bool operator==(const VectorStore&) const = default;

 private:
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  std::vector<float> data_;
};

struct Neighbor {
  VectorId id = 0;
  float dist = 0.0f;

  bool operator==(const Neighbor&) const = default;
};

/// Lexicographic (dist, id); the tie-break used everywhere.
constexpr bool closer(float da, VectorId ia, float db, VectorId ib) noexcept {
  return da < db || (da == db && ia < ib);
}
constexpr bool closer(const Neighbor& a, const Neighbor& b) noexcept {
  return closer(a.dist, a.id, b.dist, b.id);
}

/// Squared Euclidean distance.
inline float distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw InputError("distance: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  float acc = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

/// Exact k nearest rows of `store` to `query`, ascending by (dist, id).
inline std::vector<Neighbor> brute_force_knn(const VectorStore& store, std::span<const float> query,
                                             std::size_t k) {
  if (k == 0 || k > store.count())
    throw InputError("brute_force_knn: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(store.count()) + "]");
  if (query.size() != store.dim()) throw InputError("brute_force_knn: query dimension mismatch");
  std::vector<Neighbor> all(store.count());
  for (std::size_t i = 0; i < store.count(); ++i)
    all[i] = {static_cast<VectorId>(i), distance(query, store.row(i))};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) { return closer(a, b); });
  all.resize(k);
  return all;
}

/// Fixed out-degree adjacency, N x D row-major.
struct NeighborGraph {
  std::size_t degree = 0;
  std::vector<VectorId> adjacency;

  std::size_t rows() const noexcept { return degree == 0 ? 0 : adjacency.size() / degree; }

  std::span<const VectorId> neighbors(std::size_t node) const {
    return {adjacency.data() + node * degree, degree};
  }

  bool operator==(const NeighborGraph&) const = default;
};

/// Directed exact-kNN graph: row i lists the `degree` nearest rows to i (i excluded).
/// Rows are computed on worker threads but each is a pure function of the store.
inline NeighborGraph build_knn_graph(const VectorStore& store, std::size_t degree,
                                     unsigned threads = std::thread::hardware_concurrency()) {
  const std::size_t n = store.count();
  if (degree == 0 || degree >= n)
    throw InputError("build_knn_graph: degree must lie in [1, " + std::to_string(n - 1) + "]");
  NeighborGraph graph{degree, std::vector<VectorId>(n * degree)};

  auto build_rows = [&](std::size_t begin, std::size_t end) {
    std::vector<Neighbor> scratch(n);
    for (std::size_t i = begin; i < end; ++i) {
      const auto qi = store.row(i);
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) scratch[m++] = {static_cast<VectorId>(j), distance(qi, store.row(j))};
      std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(degree),
                        scratch.begin() + static_cast<std::ptrdiff_t>(m),
                        [](const Neighbor& a, const Neighbor& b) { return closer(a, b); });
      for (std::size_t s = 0; s < degree; ++s) graph.adjacency[i * degree + s] = scratch[s].id;
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, n / 64));
  if (workers <= 1) {
    build_rows(0, n);
    return graph;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(build_rows, begin, end);
    }
  }
  return graph;
}

/// Keeps candidates (sorted by (dist, id)) that are not closer to an already
/// kept neighbor than to `node`, up to `limit` of them.
inline std::vector<VectorId> relative_neighborhood_prune(const VectorStore& store, std::span<const Neighbor> sorted,
                                                         std::size_t limit) {
  std::vector<VectorId> kept;
  for (const auto& c : sorted) {
    if (kept.size() == limit) break;
    bool occluded = false;
    for (VectorId k : kept)
      if (distance(store.row(k), store.row(c.id)) <= c.dist) {
        occluded = true;
        break;
      }
    if (!occluded) kept.push_back(c.id);
  }
  return kept;
}

/// Fixed-degree search graph in the style of CAGRA's optimized graph.
///
/// Starts from the exact kNN graph of degree 4*D (capped at N-1), prunes
/// each row with the relative-neighborhood rule, then builds every output
/// row from the first D/2 pruned forward edges, followed by reverse edges
/// (nearest first) and the remaining pruned and kNN edges until the row holds
/// exactly D distinct ids. Deterministic for a given store.
inline NeighborGraph build_search_graph(const VectorStore& store, std::size_t degree,
                                        unsigned threads = std::thread::hardware_concurrency()) {
  const std::size_t n = store.count();
  if (degree == 0 || degree >= n)
    throw InputError("build_search_graph: degree must lie in [1, " + std::to_string(n - 1) + "]");
  const std::size_t pool = std::min(n - 1, 4 * degree);
  const NeighborGraph knn = build_knn_graph(store, pool, threads);

  auto with_dist = [&](std::size_t node, std::span<const VectorId> ids) {
    std::vector<Neighbor> out;
    out.reserve(ids.size());
    for (VectorId id : ids) out.push_back({id, distance(store.row(node), store.row(id))});
    return out;
  };

  std::vector<std::vector<VectorId>> pruned(n);
  for (std::size_t i = 0; i < n; ++i) pruned[i] = relative_neighborhood_prune(store, with_dist(i, knn.neighbors(i)), degree);

  std::vector<std::vector<VectorId>> reverse(n);
  for (std::size_t i = 0; i < n; ++i)
    for (VectorId j : pruned[i]) reverse[j].push_back(static_cast<VectorId>(i));

  NeighborGraph graph{degree, std::vector<VectorId>(n * degree)};
  std::vector<VectorId> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    auto push = [&](VectorId id) {
      if (row.size() < degree && id != i && std::find(row.begin(), row.end(), id) == row.end()) row.push_back(id);
    };
    const std::size_t forward = std::min(pruned[i].size(), degree / 2);
    for (std::size_t s = 0; s < forward; ++s) push(pruned[i][s]);
    auto back = with_dist(i, reverse[i]);
    std::sort(back.begin(), back.end(), [](const Neighbor& a, const Neighbor& b) { return closer(a, b); });
    for (const auto& b : back) push(b.id);
    for (VectorId id : pruned[i]) push(id);
    for (VectorId id : knn.neighbors(i)) push(id);
    std::copy(row.begin(), row.end(), graph.adjacency.begin() + static_cast<std::ptrdiff_t>(i * degree));
  }
  return graph;
}

enum class GraphViolationKind : std::uint8_t { row_length, out_of_range, self_loop, duplicate };

inline std::string_view to_string(GraphViolationKind k) {
  switch (k) {
    case GraphViolationKind::row_length: return "row_length";
    case GraphViolationKind::out_of_range: return "out_of_range";
    case GraphViolationKind::self_loop: return "self_loop";
    case GraphViolationKind::duplicate: return "duplicate";
  }
  return "?";
}

struct GraphViolation {
  GraphViolationKind kind;
  std::size_t row = 0;
  std::size_t slot = 0;
  std::uint64_t id = 0;
};

/// Lists every invariant violation of `graph` against a database of `n_db` rows.
/// An empty result means the graph is well formed.
inline std::vector<GraphViolation> validate_graph(const NeighborGraph& graph, std::size_t n_db) {
  std::vector<GraphViolation> report;
  if (graph.degree == 0 || graph.adjacency.size() != n_db * graph.degree) {
    report.push_back({GraphViolationKind::row_length, 0, 0, graph.adjacency.size()});
    return report;
  }
  std::vector<VectorId> row;
  for (std::size_t r = 0; r < n_db; ++r) {
    const auto ids = graph.neighbors(r);
    for (std::size_t s = 0; s < ids.size(); ++s) {
      if (ids[s] >= n_db) report.push_back({GraphViolationKind::out_of_range, r, s, ids[s]});
      if (ids[s] == r) report.push_back({GraphViolationKind::self_loop, r, s, ids[s]});
      for (std::size_t t = 0; t < s; ++t)
        if (ids[t] == ids[s]) {
          report.push_back({GraphViolationKind::duplicate, r, s, ids[s]});
          break;
        }
    }
  }
  return report;
}

}  // namespace pdvs
