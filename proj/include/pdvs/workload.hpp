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

// Seeded synthetic data: Gaussian vectors and Poisson request traces with a
// fixed every-delta-tokens decode probe policy.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pdvs/ann_graph.hpp"
#include "pdvs/common.hpp"
#include "pdvs/rng.hpp"

namespace pdvs::workload {

struct LengthDist {
  enum class Kind : std::uint8_t { fixed, uniform, geometric };
  Kind kind = Kind::fixed;
  std::uint64_t value = 1;  // fixed
  std::uint64_t min = 1;    // uniform, inclusive
  std::uint64_t max = 1;
  double mean = 1.0;  // geometric, support {1, 2, ...}

  static LengthDist fixed(std::uint64_t v) { return {Kind::fixed, v, v, v, static_cast<double>(v)}; }
  static LengthDist uniform(std::uint64_t lo, std::uint64_t hi) { return {Kind::uniform, lo, lo, hi, 0.5 * double(lo + hi)}; }
  static LengthDist geometric(double mean) { return {Kind::geometric, 1, 1, 1, mean}; }

  void validate(std::string_view name) const {
    switch (kind) {
      case Kind::fixed:
        if (value < 1) throw InputError(std::string(name) + ": fixed length must be >= 1");
        break;
      case Kind::uniform:
        if (min < 1 || max < min) throw InputError(std::string(name) + ": uniform needs 1 <= min <= max");
        break;
      case Kind::geometric:
        if (!(mean >= 1.0) || !std::isfinite(mean)) throw InputError(std::string(name) + ": geometric mean must be >= 1");
        break;
    }
  }

  std::uint64_t sample(rng::CounterRng& g) const {
    switch (kind) {
      case Kind::fixed: return value;
      case Kind::uniform: return g.uniform_int(min, max);
      case Kind::geometric: return g.geometric(mean);
    }
    return value;
  }
};

inline std::string_view to_string(LengthDist::Kind k) {
  switch (k) {
    case LengthDist::Kind::fixed: return "fixed";
    case LengthDist::Kind::uniform: return "uniform";
    case LengthDist::Kind::geometric: return "geometric";
  }
  return "?";
}

struct WorkloadSpec {
  std::size_t n_db = 5000;
  std::size_t dim = 16;
  std::size_t n_requests = 200;
  double arrival_rate = 2.0e-5;  // requests per microsecond
  LengthDist prompt_len = LengthDist::uniform(256, 1024);
  LengthDist output_len = LengthDist::uniform(64, 256);
  std::uint64_t delta = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_db < 1) throw InputError("workload.n_db must be >= 1");
    if (dim < 1) throw InputError("workload.dim must be >= 1");
    if (n_requests < 1) throw InputError("workload.n_requests must be >= 1");
    if (!(arrival_rate > 0.0) || !std::isfinite(arrival_rate)) throw InputError("workload.arrival_rate must be > 0");
    if (delta < 1) throw InputError("workload.delta must be >= 1");
    prompt_len.validate("workload.prompt_len");
    output_len.validate("workload.output_len");
  }
};

/// One LLM request. query_ids index the trace's query store: the first is the
/// prefill retrieval, the rest are decode probes in order.
struct SimRequest {
  std::uint64_t id = 0;
  double arrival_time = 0.0;
  std::uint64_t prompt_len = 1;
  std::uint64_t output_len = 1;
  std::uint64_t probe_interval = 1;
  std::vector<std::size_t> query_ids;

  std::size_t probe_count() const noexcept { return static_cast<std::size_t>(output_len / probe_interval); }
};

struct Trace {
  std::vector<SimRequest> requests;
  VectorStore queries;
};

/// i.i.d. standard Gaussian n x dim matrix; entry j is a pure function of (seed, j).
inline VectorStore gen_vectors(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (n < 1 || dim < 1) throw InputError("gen_vectors: n and dim must be >= 1");
  rng::CounterRng g(seed);
  std::vector<float> data(n * dim);
  for (auto& v : data) v = static_cast<float>(g.gaussian());
  return VectorStore(dim, std::move(data));
}

namespace stream {
inline constexpr std::uint64_t arrivals = 1;
inline constexpr std::uint64_t prompt = 2;
inline constexpr std::uint64_t output = 3;
inline constexpr std::uint64_t queries = 4;
}  // namespace stream

/// Database vectors for a workload.
inline VectorStore gen_database(const WorkloadSpec& spec) { return gen_vectors(spec.n_db, spec.dim, spec.seed); }

inline Trace gen_trace(const WorkloadSpec& spec) {
  spec.validate();
  rng::CounterRng arrivals(rng::derive(spec.seed, stream::arrivals));
  rng::CounterRng prompts(rng::derive(spec.seed, stream::prompt));
  rng::CounterRng outputs(rng::derive(spec.seed, stream::output));

  Trace trace;
  trace.requests.reserve(spec.n_requests);
  double t = 0.0;
  std::size_t next_query = 0;
  for (std::size_t i = 0; i < spec.n_requests; ++i) {
    double next = t + arrivals.exponential(spec.arrival_rate);
    if (i > 0 && !(next > t)) next = std::nextafter(t, INFINITY);
    t = next;
    SimRequest r;
    r.id = i;
    r.arrival_time = t;
    r.prompt_len = spec.prompt_len.sample(prompts);
    r.output_len = spec.output_len.sample(outputs);
    r.probe_interval = spec.delta;
    const std::size_t nq = 1 + r.probe_count();
    for (std::size_t q = 0; q < nq; ++q) r.query_ids.push_back(next_query++);
    trace.requests.push_back(std::move(r));
  }
  trace.queries = gen_vectors(next_query, spec.dim, rng::derive(spec.seed, stream::queries));
  return trace;
}

}  // namespace pdvs::workload
