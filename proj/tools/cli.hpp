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

// Subcommand dispatch for the `pdvs` binary. Kept in a header so tests can
// drive it in-process and check exit codes and artifacts.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdvs/ann_graph.hpp"
#include "pdvs/cluster_sim.hpp"
#include "pdvs/common.hpp"
#include "pdvs/config.hpp"
#include "pdvs/engine.hpp"
#include "pdvs/io.hpp"
#include "pdvs/rng.hpp"
#include "pdvs/roofline.hpp"
#include "pdvs/workload.hpp"

namespace pdvs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitUsage = 64;

inline constexpr const char* kUsage =
    "usage: pdvs <subcommand> [options]\n"
    "\n"
    "subcommands:\n"
    "  build-index   build a search graph from a vector file\n"
    "  search        run queries through the engine (batch or sequential)\n"
    "  gen           generate query vectors and a request trace from a config\n"
    "  roofline      sample a stage utilization curve as CSV\n"
    "  sim           simulate one architecture\n"
    "  compare       simulate all three architectures\n"
    "  bench-engine  compare continuous and one-at-a-time engine throughput\n"
    "\n"
    "Run 'pdvs <subcommand> --help' for options. TRINITY_LOG={error|warn|info|debug} sets stderr verbosity.\n";

inline std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("pdvs");
    l->set_pattern("[%l] %v");
    const char* env = std::getenv("TRINITY_LOG");
    const std::string level = env ? env : "warn";
    if (level == "error")
      l->set_level(spdlog::level::err);
    else if (level == "info")
      l->set_level(spdlog::level::info);
    else if (level == "debug")
      l->set_level(spdlog::level::debug);
    else
      l->set_level(spdlog::level::warn);
    return l;
  }();
  return log;
}

/// Writes to `path` atomically, or to `out` when path is empty or "-".
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    io::write_atomic(path, text);
}

inline json neighbors_line(std::size_t query, const std::vector<Neighbor>& neighbors, std::size_t extends) {
  json ids = json::array(), dists = json::array();
  for (const auto& n : neighbors) {
    ids.push_back(n.id);
    dists.push_back(static_cast<double>(n.dist));
  }
  return {{"query", query}, {"ids", ids}, {"dists", dists}, {"extends", extends}};
}

inline int cmd_build_index(CLI::App& app, std::vector<std::string> args, std::ostream&) {
  std::string vectors, out;
  std::size_t degree = 0;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--vectors", vectors, "database vector file")->required();
  app.add_option("--degree", degree, "out-degree D")->required();
  app.add_option("--out", out, "graph output path")->required();
  app.add_option("--threads", threads, "build threads");
  app.parse(std::move(args));
  const auto store = io::read_vectors(vectors);
  if (degree < 1 || degree >= store.count()) throw ConfigError("--degree", "must lie in [1, N-1]");
  logger()->info("building degree-{} graph over {} vectors", degree, store.count());
  const auto graph = build_search_graph(store, degree, std::max<std::size_t>(threads, 1));
  if (const auto bad = validate_graph(graph, store.count()); !bad.empty())
    throw ConsistencyError("build-index: produced an invalid graph");
  io::write_graph(out, graph);
  return kExitOk;
}

inline int cmd_search(CLI::App& app, std::vector<std::string> args, std::ostream& os) {
  std::string index, vectors, queries, mode = "batch", out;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  engine::EngineConfig cfg;
  app.add_option("--index", index, "graph file")->required();
  app.add_option("--vectors", vectors, "database vector file")->required();
  app.add_option("--queries", queries, "query vector file")->required();
  app.add_option("--k", k, "neighbors per query");
  app.add_option("--mode", mode, "batch|sequential")->check(CLI::IsMember({"batch", "sequential"}));
  app.add_option("--m", cfg.m, "internal list size M");
  app.add_option("--p", cfg.p, "parents per extend");
  app.add_option("--capacity", cfg.batch_capacity, "task slots per batch C");
  app.add_option("--seed", seed, "accepted for interface stability; the search is deterministic");
  app.add_option("--out", out, "output file (default stdout)");
  app.parse(std::move(args));
  try {
    cfg.validate();
  } catch (const InputError& e) {
    throw ConfigError("engine", e.what());
  }
  if (k < 1 || k > cfg.m) throw ConfigError("--k", "must lie in [1, m]");

  const auto store = io::read_vectors(vectors);
  const auto graph = io::read_graph(index);
  const auto qs = io::read_vectors(queries);
  if (qs.count() > 0 && qs.dim() != store.dim()) throw InputError("search: query dimension differs from database");
  if (const auto bad = validate_graph(graph, store.count()); !bad.empty())
    throw InputError("search: graph does not match the vector file");

  std::string text;
  if (mode == "sequential") {
    for (std::size_t q = 0; q < qs.count(); ++q) {
      const auto r = engine::search_sequential(qs.row(q), store, graph, cfg, k);
      text += neighbors_line(q, r.neighbors, r.extends).dump() + "\n";
    }
  } else {
    engine::Engine eng(store, graph, cfg);
    for (std::size_t q = 0; q < qs.count(); ++q) eng.admit(qs.row(q), RetrievalStage::prefill, 0.0, 0.0, k);
    std::vector<std::string> lines(qs.count());
    while (!eng.idle())
      for (auto& c : eng.step().completions)
        lines[c.request_id] = neighbors_line(c.request_id, c.neighbors, c.extends).dump() + "\n";
    for (auto& l : lines) text += l;
    logger()->info("batch search: {} batches, fill {:.3f}", eng.stats().batches_launched, eng.stats().fill_fraction());
  }
  emit(out, text, os);
  return kExitOk;
}

inline int cmd_gen(CLI::App& app, std::vector<std::string> args, std::ostream&) {
  std::string spec, out_vectors, out_trace, out_db;
  app.add_option("--spec", spec, "config file (workload section is used)")->required();
  app.add_option("--out-vectors", out_vectors, "query vector output")->required();
  app.add_option("--out-trace", out_trace, "trace JSONL output")->required();
  app.add_option("--out-db", out_db, "also write the database vectors here");
  app.parse(std::move(args));
  const auto cfg = config::load(spec);
  const auto trace = workload::gen_trace(cfg.workload);
  std::string lines;
  for (const auto& r : trace.requests) {
    json line = {{"id", r.id},
                 {"t_arrival", r.arrival_time},
                 {"prompt_len", r.prompt_len},
                 {"output_len", r.output_len},
                 {"delta", r.probe_interval},
                 {"query_ids", r.query_ids}};
    lines += line.dump() + "\n";
  }
  io::write_vectors(out_vectors, trace.queries);
  io::write_atomic(out_trace, lines);
  if (!out_db.empty()) io::write_vectors(out_db, workload::gen_database(cfg.workload));
  return kExitOk;
}

inline int cmd_roofline(CLI::App& app, std::vector<std::string> args, std::ostream& os) {
  std::string stage = "ann", xs_text, out;
  std::optional<double> ai, mem_bw, peak, x_sat, alpha;
  app.add_option("--stage", stage, "preset: prefill|decode|ann")->check(CLI::IsMember({"prefill", "decode", "ann"}));
  app.add_option("--ai", ai, "arithmetic intensity (FLOP/byte)");
  app.add_option("--mem-bw", mem_bw, "memory bandwidth (bytes/s)");
  app.add_option("--peak-flops", peak, "peak compute (FLOP/s)");
  app.add_option("--x-sat", x_sat, "saturation knee");
  app.add_option("--alpha", alpha, "pre-plateau exponent");
  app.add_option("--xs", xs_text, "comma list or inclusive range a:b:step")->required();
  app.add_option("--out", out, "output file (default stdout)");
  app.parse(std::move(args));
  auto p = roofline::default_params(roofline::parse_stage(stage));
  if (ai) p.ai = *ai;
  if (mem_bw) p.mem_bw = *mem_bw;
  if (peak) p.peak_flops = *peak;
  if (x_sat) p.x_sat = *x_sat;
  if (alpha) p.alpha = *alpha;
  try {
    p.validate();
  } catch (const DomainError& e) {
    throw ConfigError("roofline", e.what());
  }
  std::vector<double> xs;
  try {
    xs = roofline::parse_xs(xs_text);
  } catch (const InputError& e) {
    throw ConfigError("--xs", e.what());
  }
  const auto curve = roofline::sample_curve(p, xs);
  std::string text = "# u_max=" + format_double(curve.u_max) + "\nx,u\n";
  for (const auto& pt : curve.points) text += format_double(pt.x) + "," + format_double(pt.u) + "\n";
  emit(out, text, os);
  return kExitOk;
}

struct SimArgs {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline void add_sim_options(CLI::App& app, SimArgs& a) {
  app.add_option("--config", a.config_path, "run config (JSON)")->required();
  app.add_option("--seed", a.seed, "overrides workload.seed");
  app.add_option("--out", a.out, "output directory")->required();
}

inline config::RunConfig resolve(const SimArgs& a) {
  auto cfg = config::load(a.config_path);
  if (a.seed) cfg.workload.seed = *a.seed;
  return cfg;
}

inline sim::SimSetup prepare_logged(const config::RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto setup = sim::prepare(cfg.workload, cfg.index.degree);
  logger()->info("prepared {} requests over {} vectors in {:.2f}s", setup.trace.requests.size(), setup.store.count(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return setup;
}

/// Tags each JSONL record with its architecture.
inline std::string tag_lines(std::string_view jsonl, std::string_view arch) {
  std::string out;
  const std::string prefix = "{\"arch\":\"" + std::string(arch) + "\",";
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    const auto end = jsonl.find('\n', pos);
    const auto line = jsonl.substr(pos, end - pos);
    if (line.size() > 2) out += prefix + std::string(line.substr(1)) + "\n";
    pos = end == std::string_view::npos ? jsonl.size() : end + 1;
  }
  return out;
}

inline int cmd_sim(CLI::App& app, std::vector<std::string> args, std::ostream&) {
  SimArgs a;
  std::string arch_text;
  add_sim_options(app, a);
  app.add_option("--arch", arch_text, "coupled|prefill-coloc|pooled")->required();
  app.parse(std::move(args));
  const auto arch = sim::parse_architecture(arch_text);
  const auto cfg = resolve(a);
  const auto setup = prepare_logged(cfg);
  const auto result = sim::simulate(setup, arch, cfg.sim);
  if (result.metrics.saturated) logger()->warn("{} saturated before sim.max_time", result.metrics.architecture);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::write_atomic(dir / "resolved_config", config::resolved_text(cfg));
  io::write_atomic(dir / "metrics.json", sim::to_json(result.metrics).dump(2) + "\n");
  io::write_atomic(dir / "trace.jsonl", result.trace_jsonl);
  io::write_atomic(dir / "requests.csv", sim::requests_csv(result.requests));
  io::write_atomic(dir / "summary.csv", sim::summary_csv({result.metrics}));
  io::write_atomic(dir / "scheduler_log.jsonl", result.scheduler_jsonl);
  return kExitOk;
}

inline int cmd_compare(CLI::App& app, std::vector<std::string> args, std::ostream&) {
  SimArgs a;
  add_sim_options(app, a);
  app.parse(std::move(args));
  const auto cfg = resolve(a);
  const auto setup = prepare_logged(cfg);
  const auto rows = sim::compare_architectures(setup, cfg.sim);
  json metrics = json::array();
  std::vector<sim::SimMetrics> table;
  std::string trace, sched, requests;
  for (const auto& row : rows) {
    const auto name = sim::to_string(row.arch);
    metrics.push_back(sim::to_json(row.result.metrics));
    table.push_back(row.result.metrics);
    trace += tag_lines(row.result.trace_jsonl, name);
    sched += tag_lines(row.result.scheduler_jsonl, name);
    const auto csv = sim::requests_csv(row.result.requests);
    std::istringstream in(csv);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        if (requests.empty()) requests = "architecture," + line + "\n";
        header = false;
        continue;
      }
      requests += std::string(name) + "," + line + "\n";
    }
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::write_atomic(dir / "resolved_config", config::resolved_text(cfg));
  io::write_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
  io::write_atomic(dir / "trace.jsonl", trace);
  io::write_atomic(dir / "requests.csv", requests);
  io::write_atomic(dir / "summary.csv", sim::summary_csv(table));
  io::write_atomic(dir / "scheduler_log.jsonl", sched);
  return kExitOk;
}

struct BenchMode {
  double wall_seconds = 0.0;
  std::size_t distance_evals = 0;
  std::size_t batches = 0;
  double fill_fraction = 0.0;
  std::vector<double> latencies;
};

inline json to_json(const BenchMode& b) {
  const double rate = b.wall_seconds > 0.0 ? static_cast<double>(b.distance_evals) / b.wall_seconds : 0.0;
  return {{"wall_seconds", b.wall_seconds},
          {"distance_evals", b.distance_evals},
          {"distance_evals_per_second", rate},
          {"tasks_per_second", rate},
          {"batches", b.batches},
          {"mean_fill_fraction", b.fill_fraction},
          {"dummy_fraction", b.batches == 0 ? 0.0 : 1.0 - b.fill_fraction},
          {"latency_p50_seconds", sim::percentile(b.latencies, 0.50)},
          {"latency_p95_seconds", sim::percentile(b.latencies, 0.95)}};
}

/// Sequential mode runs each query on its own engine; batch mode admits all
/// of them at once. Distance evaluation counts are identical by construction.
inline json bench_engine(const VectorStore& store, const NeighborGraph& graph, const VectorStore& queries,
                         const engine::EngineConfig& cfg, std::size_t k) {
  using clock = std::chrono::steady_clock;
  BenchMode seq, batch;
  std::size_t seq_slots = 0, seq_real = 0;
  const auto s0 = clock::now();
  for (std::size_t q = 0; q < queries.count(); ++q) {
    const auto q0 = clock::now();
    engine::Engine eng(store, graph, cfg);
    eng.admit(queries.row(q), RetrievalStage::prefill, 0.0, 0.0, k);
    while (!eng.idle()) eng.step();
    seq.latencies.push_back(std::chrono::duration<double>(clock::now() - q0).count());
    seq.batches += eng.stats().batches_launched;
    seq.distance_evals += eng.stats().real_tasks;
    seq_slots += eng.stats().task_slots;
    seq_real += eng.stats().real_tasks;
  }
  seq.wall_seconds = std::chrono::duration<double>(clock::now() - s0).count();
  seq.fill_fraction = seq_slots == 0 ? 0.0 : static_cast<double>(seq_real) / static_cast<double>(seq_slots);

  const auto b0 = clock::now();
  engine::Engine eng(store, graph, cfg);
  for (std::size_t q = 0; q < queries.count(); ++q) eng.admit(queries.row(q), RetrievalStage::prefill, 0.0, 0.0, k);
  while (!eng.idle()) {
    const auto report = eng.step();
    const double t = std::chrono::duration<double>(clock::now() - b0).count();
    for (std::size_t i = 0; i < report.completions.size(); ++i) batch.latencies.push_back(t);
  }
  batch.wall_seconds = std::chrono::duration<double>(clock::now() - b0).count();
  batch.distance_evals = eng.stats().real_tasks;
  batch.batches = eng.stats().batches_launched;
  batch.fill_fraction = eng.stats().fill_fraction();

  return {{"queries", queries.count()},
          {"n_db", store.count()},
          {"dim", store.dim()},
          {"batch_capacity", cfg.batch_capacity},
          {"sequential", to_json(seq)},
          {"batch", to_json(batch)}};
}

inline int cmd_bench_engine(CLI::App& app, std::vector<std::string> args, std::ostream& os) {
  std::string config_path, out;
  std::size_t n_queries = 256, k = 10;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "run config (workload, index, engine sections are used)");
  app.add_option("--queries", n_queries, "number of generated queries");
  app.add_option("--k", k, "neighbors per query");
  app.add_option("--seed", seed, "overrides workload.seed");
  app.add_option("--out", out, "output file (default stdout)");
  app.parse(std::move(args));
  config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
  if (seed) cfg.workload.seed = *seed;
  if (k < 1 || k > cfg.sim.engine.m) throw ConfigError("--k", "must lie in [1, engine.m]");
  const auto store = workload::gen_database(cfg.workload);
  const auto graph = build_search_graph(store, cfg.index.degree);
  // Queries use their own stream so they never coincide with the trace's.
  const auto queries = n_queries == 0
                           ? VectorStore{}
                           : workload::gen_vectors(n_queries, cfg.workload.dim, rng::derive(cfg.workload.seed, 5));
  emit(out, bench_engine(store, graph, queries, cfg.sim.engine, k).dump(2) + "\n", os);
  return kExitOk;
}

/// Entry point: argv[0] is the program name, argv[1] the subcommand.
inline int run_subcommand(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
  if (argv.size() < 2) {
    err << kUsage;
    return kExitUsage;
  }
  const std::string name = argv[1];
  if (name == "--help" || name == "-h" || name == "help") {
    out << kUsage;
    return kExitOk;
  }
  using Handler = int (*)(CLI::App&, std::vector<std::string>, std::ostream&);
  static const std::pair<const char*, Handler> handlers[] = {
      {"build-index", cmd_build_index}, {"search", cmd_search},   {"gen", cmd_gen},
      {"roofline", cmd_roofline},       {"sim", cmd_sim},         {"compare", cmd_compare},
      {"bench-engine", cmd_bench_engine}};
  const auto it = std::find_if(std::begin(handlers), std::end(handlers),
                               [&](const auto& h) { return name == h.first; });
  if (it == std::end(handlers)) {
    err << "unknown subcommand '" << name << "'\n\n" << kUsage;
    return kExitUsage;
  }
  CLI::App app("pdvs " + name, "pdvs " + name);
  // CLI11 consumes arguments from the back.
  std::vector<std::string> rest(argv.rbegin(), argv.rend() - 2);
  try {
    return it->second(app, std::move(rest), out);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {  // InputError
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace pdvs::cli
