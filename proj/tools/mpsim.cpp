// Copyright 2026 The mpsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// mpsim command-line front end: partition, simulate, tpcheck, topology.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpsim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kSchema = 2, kInfeasible = 3, kDeadlock = 4, kTpCheck = 5 };

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mpsim::SpecError(mpsim::SpecError::Kind::Parse, path, "cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mpsim::Error("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

struct Loaded {
  mpsim::ModelSpec spec;
  mpsim::RunConfig cfg;
  mpsim::NodeTree tree;
  mpsim::CostedTree costed;
  mpsim::Assignment assignment;
};

Loaded load(const std::string& model_path, const std::string& config_path) {
  Loaded l;
  l.spec = mpsim::load_model_spec(read_file(model_path));
  l.cfg = config_path.empty() ? mpsim::RunConfig{} : mpsim::load_run_config(read_file(config_path));
  l.cfg.validate();
  l.tree = mpsim::build_node_tree(l.spec);
  l.costed = mpsim::compute_costs(l.tree, l.spec, l.cfg.alpha);
  l.assignment = mpsim::partition_tree(l.costed, l.cfg.pipeline_parallel_degree);
  return l;
}

json assignment_json(const Loaded& l) {
  json j = mpsim::to_json(l.assignment, l.costed);
  json modules = json::object();
  const auto parts = mpsim::module_partitions(l.assignment, l.tree);
  for (std::size_t m = 0; m < l.spec.modules.size(); ++m) modules[l.spec.modules[m].id] = parts[m];
  j["modules"] = modules;
  j["num_partitions"] = l.assignment.num_partitions;
  j["alpha"] = l.cfg.alpha;
  return j;
}

void print_loads(const mpsim::Assignment& a, const mpsim::CostedTree& ct) {
  const auto loads = mpsim::partition_report(a, ct);
  std::printf("partition  load\n");
  double total = 0.0;
  for (std::size_t p = 0; p < loads.size(); ++p) {
    std::printf("%-10zu %.6f\n", p, loads[p]);
    total += loads[p];
  }
  std::printf("total      %.6f\n", total);
}

int cmd_partition(const std::string& model, const std::string& config, const fs::path& out_dir) {
  const auto l = load(model, config);
  fs::create_directories(out_dir);
  write_json(out_dir / "assignment.json", assignment_json(l));
  print_loads(l.assignment, l.costed);
  return kOk;
}

json step_json(int index, const mpsim::pipeline::StepResult& r, bool replayed) {
  return {{"step", index},
          {"makespan", r.timeline.makespan},
          {"replayed", replayed},
          {"messages", mpsim::pipeline::to_json(r.counts)}};
}

int cmd_simulate(const std::string& model, const std::string& config, const std::string& cluster_path,
                 const fs::path& out_dir, bool compare, std::optional<std::uint64_t> seed) {
  namespace pl = mpsim::pipeline;
  auto l = load(model, config);
  if (seed) l.cfg.seed = *seed;
  const auto cluster = cluster_path.empty() ? mpsim::ClusterShape{} : mpsim::load_cluster_shape(read_file(cluster_path));
  const auto topo = mpsim::build_topology(l.cfg.resolved_world_size(), l.cfg.pipeline_parallel_degree,
                                          l.cfg.tensor_parallel_degree, l.cfg.placement_strategy, l.cfg.prescaled_batch);
  fs::create_directories(out_dir);

  std::vector<mpsim::tp::Replacement> replaced;
  if (l.cfg.tensor_parallel_degree > 1 || !l.cfg.tp_modules.empty()) {
    const std::set<std::string> marks(l.cfg.tp_modules.begin(), l.cfg.tp_modules.end());
    for (const auto& id : marks) {
      if (!l.spec.has_module(id)) {
        throw mpsim::SpecError(mpsim::SpecError::Kind::BadValue, id, "tp_modules names unknown module '" + id + "'");
      }
    }
    replaced = mpsim::tp::plan_replacement(l.spec, mpsim::tp::default_registry(), marks);
  }
  const auto distributed = mpsim::tp::distributed_modules(l.spec, replaced);
  const auto mem_cfg = l.cfg.memory_config();
  const auto memory = mpsim::memory_report(l.spec, l.tree, l.assignment, topo, mem_cfg, distributed);

  auto costs = pl::node_costs(l.spec, l.tree);
  const auto ckpt = mpsim::plan_checkpoints(l.spec, mpsim::module_partitions(l.assignment, l.tree), mem_cfg);
  costs.recompute = mpsim::recompute_times(l.spec, l.tree, ckpt);

  pl::TrainingOptions opt;
  opt.step.policy = l.cfg.pipeline;
  opt.step.microbatches = l.cfg.microbatches;
  opt.step.bwd_factor = l.cfg.bwd_factor;
  opt.step.jitter = l.cfg.jitter;
  opt.step.seed = l.cfg.seed;
  opt.steps = l.cfg.steps;
  opt.static_mode = l.cfg.static_mode;
  opt.fast_mode = l.cfg.fast_mode;
  opt.record_steps = l.cfg.record_steps;

  pl::TrainingResult result;
  try {
    result = pl::run_training(l.spec, l.tree, costs, l.assignment, topo, cluster, opt);
  } catch (const mpsim::DeadlockError& e) {
    const auto dump = out_dir / "deadlock.txt";
    write_file(dump, std::string(e.what()) + "\n" + e.queue_snapshot());
    std::cerr << "error: " << e.what() << "; queue dump written to " << dump.string() << "\n";
    return kDeadlock;
  }
  const auto& last = result.steps.back();

  json steps = json::array();
  pl::MessageCounts total;
  for (std::size_t s = 0; s < result.steps.size(); ++s) {
    const auto& r = result.steps[s];
    const bool replayed = opt.static_mode && static_cast<int>(s) >= opt.record_steps;
    steps.push_back(step_json(static_cast<int>(s), r, replayed));
    total.requests += r.counts.requests;
    total.responses += r.counts.responses;
    total.metadata_rounds += r.counts.metadata_rounds;
    total.tensor_hops += r.counts.tensor_hops;
  }
  json busy = json::array();
  for (double b : last.busy) busy.push_back(last.timeline.makespan > 0 ? b / last.timeline.makespan : 1.0);

  json summary = {{"makespan", last.timeline.makespan},
                  {"forward_makespan", last.timeline.forward_makespan()},
                  {"busy_fraction", busy},
                  {"max_workers", last.max_workers},
                  {"requests", last.counts.requests},
                  {"responses", last.counts.responses},
                  {"metadata_rounds", last.counts.metadata_rounds},
                  {"tensor_hops", last.counts.tensor_hops},
                  {"messages_total", pl::to_json(total)},
                  {"steps", steps},
                  {"config", mpsim::to_json(l.cfg)}};
  if (result.replay) {
    summary["static"] = {{"recorded_steps", opt.record_steps},
                         {"replayed_trace", result.replay->source_trace},
                         {"replayed_trace_makespan", result.replay->source_makespan}};
  }
  if (result.fast_plan) {
    summary["fast"] = {{"chains", result.fast_plan->chains.size()},
                       {"hops_before", result.fast_plan->hops_before},
                       {"hops_after", result.fast_plan->hops_after}};
  }
  json tp = json::array();
  for (const auto& r : replaced) tp.push_back({{"module", r.module}, {"kind", r.kind}, {"distributed", r.distributed_kind}});
  summary["tensor_parallel_modules"] = tp;

  if (compare) {
    json cmp = json::object();
    for (auto policy : {pl::Policy::Simple, pl::Policy::Interleaved}) {
      auto o = opt;
      o.step.policy = policy;
      try {
        const auto r = pl::run_training(l.spec, l.tree, costs, l.assignment, topo, cluster, o);
        cmp[pl::to_string(policy)] = {{"makespan", r.steps.back().timeline.makespan},
                                      {"forward_makespan", r.steps.back().timeline.forward_makespan()}};
      } catch (const mpsim::DeadlockError& e) {
        cmp[pl::to_string(policy)] = {{"error", e.what()}};
      }
    }
    summary["compare"] = cmp;
  }

  write_json(out_dir / "assignment.json", assignment_json(l));
  write_json(out_dir / "topology.json", mpsim::to_json(topo));
  write_file(out_dir / "timeline.csv", pl::timeline_csv(last.timeline));
  write_json(out_dir / "timeline.json", pl::to_json(last.timeline));
  write_json(out_dir / "gantt.json", pl::gantt_json(last.timeline));
  write_json(out_dir / "memory.json", mpsim::to_json(memory));
  write_json(out_dir / "summary.json", summary);
  std::printf("makespan %.9g s over %d microbatches on %d pipeline ranks\n", last.timeline.makespan,
              l.cfg.microbatches, l.cfg.pipeline_parallel_degree);
  return kOk;
}

int cmd_tpcheck(const std::vector<std::size_t>& degrees, int cases, std::uint64_t seed, bool inject_fault,
                const fs::path& out_dir) {
  mpsim::tp::OracleOptions opt;
  opt.degrees = degrees;
  opt.cases = cases;
  opt.seed = seed;
  opt.inject_fault = inject_fault;
  const auto results = mpsim::tp::run_oracle_suite(opt);
  fs::create_directories(out_dir);
  write_json(out_dir / "tpcheck.json", mpsim::tp::to_json(results));

  std::map<std::pair<std::string, std::size_t>, std::pair<double, bool>> worst;
  for (const auto& r : results) {
    auto [it, fresh] = worst.try_emplace({r.op, r.T}, r.max_rel_err, !r.pass);
    if (!fresh) {
      it->second.first = std::max(it->second.first, r.max_rel_err);
      it->second.second = it->second.second || !r.pass;
    }
  }
  for (const auto& [key, w] : worst) {
    std::printf("%-44s T=%zu max_rel_err=%.3e %s\n", key.first.c_str(), key.second, w.first,
                w.second ? "FAIL" : (w.first == 0.0 ? "exact" : "ok"));
  }
  const bool ok = mpsim::tp::all_pass(results);
  std::printf("%s\n", ok ? "all checks passed" : "tensor-parallel checks FAILED");
  return ok ? kOk : kTpCheck;
}

int cmd_topology(const std::string& config, const fs::path& out_dir) {
  auto cfg = mpsim::load_run_config(read_file(config));
  cfg.validate();
  const auto topo = mpsim::build_topology(cfg.resolved_world_size(), cfg.pipeline_parallel_degree,
                                          cfg.tensor_parallel_degree, cfg.placement_strategy, cfg.prescaled_batch);
  fs::create_directories(out_dir);
  write_json(out_dir / "topology.json", mpsim::to_json(topo));
  std::printf("rank  pp  tp  rdp  dp\n");
  for (int r = 0; r < topo.world_size(); ++r) {
    const auto& c = topo.coord(r);
    std::printf("%-5d %-3d %-3d %-4d %d\n", r, c.pp_rank, c.tp_rank, c.rdp_rank, c.dp_rank);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-parallel training simulator"};
  app.require_subcommand(1);

  std::string model, config, cluster, out_dir = ".";
  bool compare = false, inject_fault = false;
  std::uint64_t seed = 0;
  std::vector<std::size_t> degrees{1, 2, 4};
  int cases = 50;

  auto* part = app.add_subcommand("partition", "Assign module nodes to pipeline partitions");
  part->add_option("--model", model, "Model description JSON")->required();
  part->add_option("--config", config, "Run configuration JSON");
  part->add_option("--out-dir", out_dir, "Output directory");

  auto* sim = app.add_subcommand("simulate", "Simulate training steps of the module-server runtime");
  sim->add_option("--model", model, "Model description JSON")->required();
  sim->add_option("--config", config, "Run configuration JSON");
  sim->add_option("--cluster", cluster, "Cluster description JSON");
  sim->add_option("--out-dir", out_dir, "Output directory");
  sim->add_flag("--compare", compare, "Also run both schedules and record their makespans");
  auto* seed_opt = sim->add_option("--seed", seed, "Seed for compute-time jitter");

  auto* tpc = app.add_subcommand("tpcheck", "Check tensor-parallel modules against single-rank references");
  tpc->add_option("--degrees", degrees, "Tensor-parallel degrees to sweep")->delimiter(',');
  tpc->add_option("--cases", cases, "Random shapes per operation and degree")->check(CLI::PositiveNumber);
  tpc->add_option("--seed", seed, "Random seed");
  tpc->add_option("--out-dir", out_dir, "Output directory");
  tpc->add_flag("--inject-fault", inject_fault, "Feed a wrong weight shard (negative control)");

  auto* topo = app.add_subcommand("topology", "Print the rank layout of a configuration");
  topo->add_option("--config", config, "Run configuration JSON")->required();
  topo->add_option("--out-dir", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*part) return cmd_partition(model, config, out_dir);
    if (*sim) {
      std::optional<std::uint64_t> s;
      if (seed_opt->count() > 0) s = seed;
      return cmd_simulate(model, config, cluster, out_dir, compare, s);
    }
    if (*tpc) return cmd_tpcheck(degrees, cases, tpc->count("--seed") ? seed : 7, inject_fault, out_dir);
    if (*topo) return cmd_topology(config, out_dir);
  } catch (const mpsim::SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSchema;
  } catch (const mpsim::InfeasibleConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const mpsim::DeadlockError& e) {
    std::cerr << "error: " << e.what() << "\n" << e.queue_snapshot();
    return kDeadlock;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
