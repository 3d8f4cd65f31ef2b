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

// RunConfig: one JSON file with a section per module. Absent keys take the
// defaults below, unknown keys are rejected, and the fully resolved view can
// be written back so a rerun from it reproduces the same outputs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pdvs/cluster_sim.hpp"
#include "pdvs/common.hpp"
#include "pdvs/engine.hpp"
#include "pdvs/roofline.hpp"
#include "pdvs/scheduler.hpp"
#include "pdvs/workload.hpp"

namespace pdvs::config {

using nlohmann::json;

struct IndexConfig {
  std::size_t degree = 16;
};

struct RunConfig {
  workload::WorkloadSpec workload;
  IndexConfig index;
  sim::SimConfig sim;  // engine, scheduler, latency model, model constants

  void validate() const;
};

namespace detail {

struct Field {
  std::string name;
  std::function<void(const json&, const std::string& key)> set;
  std::function<json()> get;
};

inline double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(key, "must be finite");
  return d;
}

inline std::uint64_t as_u64(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) throw ConfigError(key, "must be >= 0");
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  throw ConfigError(key, "expected a non-negative integer");
}

inline Field num(std::string name, double& ref) {
  return {name, [&ref](const json& v, const std::string& key) { ref = as_double(v, key); },
          [&ref] { return json(ref); }};
}

template <class Int>
Field integer(std::string name, Int& ref) {
  return {name, [&ref](const json& v, const std::string& key) { ref = static_cast<Int>(as_u64(v, key)); },
          [&ref] { return json(static_cast<std::uint64_t>(ref)); }};
}

inline Field boolean(std::string name, bool& ref) {
  return {name,
          [&ref](const json& v, const std::string& key) {
            if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
            ref = v.get<bool>();
          },
          [&ref] { return json(ref); }};
}

inline Field length_dist(std::string name, workload::LengthDist& ref) {
  return {name,
          [&ref](const json& v, const std::string& key) {
            if (!v.is_object()) throw ConfigError(key, "expected an object with a 'kind' key");
            if (!v.contains("kind") || !v["kind"].is_string()) throw ConfigError(key + ".kind", "missing or not a string");
            const auto kind = v["kind"].get<std::string>();
            auto allow = [&](std::initializer_list<const char*> keys) {
              for (const auto& [k, _] : v.items()) {
                bool ok = k == "kind";
                for (const char* a : keys) ok = ok || k == a;
                if (!ok) throw ConfigError(key + "." + k, "unknown key for kind '" + kind + "'");
              }
            };
            auto need = [&](const char* k) -> const json& {
              if (!v.contains(k)) throw ConfigError(key + "." + k, "required for kind '" + kind + "'");
              return v[k];
            };
            if (kind == "fixed") {
              allow({"value"});
              ref = workload::LengthDist::fixed(as_u64(need("value"), key + ".value"));
            } else if (kind == "uniform") {
              allow({"min", "max"});
              ref = workload::LengthDist::uniform(as_u64(need("min"), key + ".min"), as_u64(need("max"), key + ".max"));
            } else if (kind == "geometric") {
              allow({"mean"});
              ref = workload::LengthDist::geometric(as_double(need("mean"), key + ".mean"));
            } else {
              throw ConfigError(key + ".kind", "expected fixed|uniform|geometric");
            }
            try {
              ref.validate(key);
            } catch (const InputError& e) {
              throw ConfigError(key, e.what());
            }
          },
          [&ref]() -> json {
            switch (ref.kind) {
              case workload::LengthDist::Kind::fixed: return {{"kind", "fixed"}, {"value", ref.value}};
              case workload::LengthDist::Kind::uniform: return {{"kind", "uniform"}, {"min", ref.min}, {"max", ref.max}};
              case workload::LengthDist::Kind::geometric: return {{"kind", "geometric"}, {"mean", ref.mean}};
            }
            return nullptr;
          }};
}

struct Section;
using Entry = std::variant<Field, Section>;

struct Section {
  std::string name;
  std::vector<Entry> entries;
};

inline void apply(const Section& s, const json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    bool found = false;
    for (const auto& e : s.entries) {
      if (const auto* f = std::get_if<Field>(&e); f && f->name == key) {
        f->set(value, path);
        found = true;
      } else if (const auto* sub = std::get_if<Section>(&e); sub && sub->name == key) {
        apply(*sub, value, path);
        found = true;
      }
      if (found) break;
    }
    if (!found) throw ConfigError(path, "unknown key");
  }
}

inline json dump(const Section& s) {
  json out = json::object();
  for (const auto& e : s.entries) {
    if (const auto* f = std::get_if<Field>(&e))
      out[f->name] = f->get();
    else
      out[std::get<Section>(e).name] = dump(std::get<Section>(e));
  }
  return out;
}

inline Section roofline_section(std::string name, roofline::StageRooflineParams& p) {
  return {std::move(name),
          {num("ai", p.ai), num("mem_bw", p.mem_bw), num("peak_flops", p.peak_flops), num("x_sat", p.x_sat),
           num("alpha", p.alpha)}};
}

inline Section schema(RunConfig& c) {
  auto& w = c.workload;
  auto& e = c.sim.engine;
  auto& s = c.sim.scheduler;
  auto& g = s.control;
  auto& l = c.sim.latency;
  auto& m = c.sim.model;
  return Section{
      "",
      {Section{"workload",
               {integer("n_db", w.n_db), integer("dim", w.dim), integer("n_requests", w.n_requests),
                num("arrival_rate", w.arrival_rate), length_dist("prompt_len", w.prompt_len),
                length_dist("output_len", w.output_len), integer("delta", w.delta), integer("seed", w.seed)}},
       Section{"index", {integer("degree", c.index.degree)}},
       Section{"engine",
               {integer("m", e.m), integer("p", e.p), integer("entry_count", e.entry_count),
                integer("batch_capacity", e.batch_capacity), integer("stop_streak", e.stop_streak),
                integer("max_extends", e.max_extends)}},
       Section{"scheduler",
               {integer("slots_n", s.slots_n), num("r", s.r), num("r_min", s.r_min), num("r_max", s.r_max),
                num("tau_pre", s.tau_pre), num("tau_global", s.tau_global), num("gamma", s.gamma), num("e0", s.e0),
                num("l_pre_max", s.l_pre_max),
                Section{"control",
                        {num("interval", g.interval), num("delta_r", g.delta_r), num("beta_tau", g.beta_tau),
                         num("tau_pre_min", g.tau_pre_min), num("u_kv_target", g.u_kv_target),
                         num("u_kv_margin", g.u_kv_margin), num("stall_target", g.stall_target)}}}},
       Section{"latency_model",
               {num("intra_node_rtt", l.intra_node_rtt), num("network_rtt", l.network_rtt),
                num("intra_node_bw", l.intra_node_bw), num("network_bw", l.network_bw),
                num("tp_collective_per_layer", l.tp_collective_per_layer),
                num("ep_dispatch_local", l.ep_dispatch_local), num("ep_dispatch_remote", l.ep_dispatch_remote),
                num("contention_factor", l.contention_factor), num("kv_link_capacity", l.kv_link_capacity),
                num("retrieval_payload", l.retrieval_payload), num("query_payload", l.query_payload)}},
       Section{"model",
               {num("prefill_flops_per_token", m.prefill_flops_per_token), integer("layers", m.layers),
                num("decode_bytes_per_step", m.decode_bytes_per_step), num("kv_bytes_per_token", m.kv_bytes_per_token),
                num("ann_flops_per_task", m.ann_flops_per_task), num("ann_launch_overhead", m.ann_launch_overhead),
                num("ann_step_overhead", m.ann_step_overhead), integer("top_k", m.top_k)}},
       Section{"roofline",
               {roofline_section("prefill", m.prefill), roofline_section("decode", m.decode),
                roofline_section("ann", m.ann)}},
       Section{"sim", {num("max_time", c.sim.max_time), boolean("capture_trace", c.sim.capture_trace)}}}};
}

}  // namespace detail

inline void RunConfig::validate() const {
  try {
    workload.validate();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    const auto space = msg.find(' ');
    throw ConfigError(msg.substr(0, space), space == std::string::npos ? msg : msg.substr(space + 1));
  }
  if (index.degree < 1) throw ConfigError("index.degree", "must be >= 1");
  if (index.degree >= workload.n_db) throw ConfigError("index.degree", "must be < workload.n_db");
  try {
    sim.validate();
  } catch (const InputError& e) {
    throw ConfigError("engine", e.what());
  } catch (const DomainError& e) {
    throw ConfigError("roofline", e.what());
  }
}

/// Parses a RunConfig from JSON text. Throws ConfigError naming the key.
inline RunConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  detail::apply(detail::schema(c), j, "");
  c.validate();
  return c;
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

inline json to_json(const RunConfig& c) {
  RunConfig copy = c;
  return detail::dump(detail::schema(copy));
}

/// Pretty JSON with a trailing newline; stable key order.
inline std::string resolved_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace pdvs::config
