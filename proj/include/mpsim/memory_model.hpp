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


#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/auto_partitioner.hpp"
#include "mpsim/error.hpp"
#include "mpsim/model_graph.hpp"
#include "mpsim/topology.hpp"

namespace mpsim {

struct CheckpointStrategy {
  enum class Kind { Each, Contiguous, Group };
  Kind kind = Kind::Each;
  int k = 1;
  bool operator==(const CheckpointStrategy&) const = default;
};

inline CheckpointStrategy parse_checkpoint_strategy(const std::string& s) {
  if (s == "each") return {CheckpointStrategy::Kind::Each, 1};
  if (s == "contiguous") return {CheckpointStrategy::Kind::Contiguous, 0};
  if (s.rfind("group_", 0) == 0 && s.size() > 6 &&
      std::all_of(s.begin() + 6, s.end(), [](char c) { return c >= '0' && c <= '9'; }) && s.size() < 16) {
    const int k = std::stoi(s.substr(6));
    if (k >= 2) return {CheckpointStrategy::Kind::Group, k};
  }
  throw SpecError(SpecError::Kind::BadValue, s,
                  "checkpoint strategy must be 'each', 'contiguous' or 'group_k' with k >= 2, got '" + s + "'");
}

inline std::string to_string(const CheckpointStrategy& s) {
  switch (s.kind) {
    case CheckpointStrategy::Kind::Each: return "each";
    case CheckpointStrategy::Kind::Contiguous: return "contiguous";
    case CheckpointStrategy::Kind::Group: return "group_" + std::to_string(s.k);
  }
  return "?";
}

/// Splits an ordered layer sequence into checkpoint groups, returned as
/// index lists. No group ever spans two partitions.
inline std::vector<std::vector<std::size_t>> checkpoint_grouping(std::span<const int> partitions,
                                                                 const CheckpointStrategy& strategy) {
  if (partitions.empty()) throw ContractViolation("checkpoint_grouping: empty layer sequence");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    bool extend = !groups.empty() && partitions[groups.back().back()] == partitions[i];
    switch (strategy.kind) {
      case CheckpointStrategy::Kind::Each: extend = false; break;
      case CheckpointStrategy::Kind::Contiguous: break;
      case CheckpointStrategy::Kind::Group:
        extend = extend && groups.back().size() < static_cast<std::size_t>(strategy.k);
        break;
    }
    if (extend) groups.back().push_back(i);
    else groups.push_back({i});
  }
  return groups;
}

inline std::vector<std::vector<std::string>> checkpoint_grouping(std::span<const std::string> layers,
                                                                 std::span<const int> partitions,
                                                                 const CheckpointStrategy& strategy) {
  if (layers.size() != partitions.size()) throw ContractViolation("checkpoint_grouping: size mismatch");
  std::vector<std::vector<std::string>> out;
  for (const auto& g : checkpoint_grouping(partitions, strategy)) {
    auto& named = out.emplace_back();
    for (auto i : g) named.push_back(layers[i]);
  }
  return out;
}

struct MemoryConfig {
  double optimizer_bytes_per_param = 8.0;
  double grad_bytes_per_param = 4.0;
  bool fp16_params = false;
  bool shard_optimizer_state = false;
  bool offload_activations = false;
  int activation_loading_horizon = 4;
  CheckpointStrategy checkpoint_strategy;
  int microbatches = 1;
  /// Modules whose activations are checkpointed. A sequential module has its
  /// children grouped by the strategy; any other module forms one group.
  std::vector<std::string> checkpoint_modules;
  bool checkpoint_all_sequential = false;
  /// Activations of tensor-parallel modules are sharded (memory-optimized mode).
  bool shard_tp_activations = true;

  double param_bytes_per_param() const { return fp16_params ? 2.0 : 4.0; }
  /// Fraction of checkpointed activations resident on the device.
  double residency_factor() const {
    if (!offload_activations) return 1.0;
    return static_cast<double>(std::min(microbatches, activation_loading_horizon)) / microbatches;
  }

  void validate() const {
    if (activation_loading_horizon < 1) throw InfeasibleConfig("activation_loading_horizon must be >= 1");
    if (microbatches < 1) throw InfeasibleConfig("microbatches must be >= 1");
    if (checkpoint_strategy.kind == CheckpointStrategy::Kind::Group && checkpoint_strategy.k < 2) {
      throw InfeasibleConfig("group_k checkpointing needs k >= 2");
    }
    if (optimizer_bytes_per_param < 0 || grad_bytes_per_param < 0) {
      throw InfeasibleConfig("per-parameter byte counts must be non-negative");
    }
  }
};

struct CheckpointPlan {
  std::vector<std::vector<std::size_t>> groups;  // module indices
  std::vector<double> stored;                    // boundary bytes per group
  std::vector<int> group_partition;
  std::vector<bool> checkpointed;                // per module: inside some group
};

/// Resolves which modules are checkpointed and how they are grouped.
/// A group keeps its input and its output; the input is the preceding
/// layer's output (the first layer's own output stands in for the input of
/// the sequence).
inline CheckpointPlan plan_checkpoints(const ModelSpec& spec, std::span<const int> module_partition,
                                       const MemoryConfig& cfg) {
  CheckpointPlan plan;
  plan.checkpointed.assign(spec.modules.size(), false);
  std::vector<std::size_t> targets;
  for (const auto& id : cfg.checkpoint_modules) {
    if (!spec.has_module(id)) throw SpecError(SpecError::Kind::BadValue, id, "checkpointed module '" + id + "' does not exist");
    targets.push_back(spec.index_of(id));
  }
  if (cfg.checkpoint_all_sequential) {
    for (std::size_t m = 0; m < spec.modules.size(); ++m) {
      if (spec.modules[m].is_sequential) targets.push_back(m);
    }
  }
  std::sort(targets.begin(), targets.end(), [&](auto a, auto b) {
    return std::make_pair(spec.depth(a), spec.order_key(a)) < std::make_pair(spec.depth(b), spec.order_key(b));
  });
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  for (auto t : targets) {
    if (plan.checkpointed[t]) continue;  // nested in an earlier target
    std::vector<std::size_t> layers;
    if (spec.modules[t].is_sequential && !spec.children_of(t).empty()) layers = spec.children_of(t);
    else layers = {t};
    std::vector<int> parts;
    for (auto l : layers) parts.push_back(module_partition[l]);
    for (const auto& g : checkpoint_grouping(parts, cfg.checkpoint_strategy)) {
      std::vector<std::size_t> members;
      for (auto i : g) members.push_back(layers[i]);
      const std::size_t first = g.front();
      const double input = first > 0 ? spec.modules[layers[first - 1]].activation_bytes
                                     : spec.modules[layers[first]].activation_bytes;
      plan.stored.push_back(input + spec.modules[members.back()].activation_bytes);
      plan.group_partition.push_back(parts[first]);
      for (auto m : members) {
        for (auto s : spec.subtree(m)) plan.checkpointed[s] = true;
      }
      plan.groups.push_back(std::move(members));
    }
  }
  return plan;
}

/// Extra backward seconds per module node: checkpointed modules rerun their
/// forward before their backward.
inline std::vector<double> recompute_times(const ModelSpec& spec, const NodeTree& tree, const CheckpointPlan& plan) {
  std::vector<double> out(tree.size(), 0.0);
  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    if (plan.checkpointed[m]) out[tree.node_of_module[m]] += spec.modules[m].fwd_time;
  }
  return out;
}

struct RankMemory {
  int rank = 0;
  int pp_rank = 0;
  int tp_rank = 0;
  double param_bytes = 0.0;
  double grad_bytes = 0.0;
  double optimizer_bytes = 0.0;
  double activation_bytes = 0.0;
  double checkpoint_activation_bytes = 0.0;  // part of activation_bytes held as checkpoints
  double distributed_param_bytes = 0.0;      // part of param_bytes from tensor-parallel modules
  double replicated_param_bytes = 0.0;

  double total() const { return param_bytes + grad_bytes + optimizer_bytes + activation_bytes; }
};

/// Per-rank memory footprint. `distributed` flags modules whose parameters
/// (and, when sharded, activations) are split across the TP_GROUP.
inline std::vector<RankMemory> memory_report(const ModelSpec& spec, const NodeTree& tree, const Assignment& assignment,
                                             const Topology& topo, const MemoryConfig& cfg,
                                             const std::vector<bool>& distributed = {}) {
  cfg.validate();
  if (assignment.partition.size() != tree.size()) throw ContractViolation("assignment does not cover the tree");
  if (!distributed.empty() && distributed.size() != spec.modules.size()) {
    throw ContractViolation("distributed flags must cover every module");
  }
  auto is_dist = [&](std::size_t m) { return !distributed.empty() && distributed[m]; };
  const auto module_partition = module_partitions(assignment, tree);
  const double T = topo.tp_degree();
  const int P = assignment.num_partitions;

  // Parameter counts per partition, split into replicated and TP-distributed.
  std::vector<double> repl(static_cast<std::size_t>(P), 0.0), dist(static_cast<std::size_t>(P), 0.0);
  std::vector<int> param_partition(spec.params.size(), -1);
  std::vector<bool> param_dist(spec.params.size(), false);
  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    for (auto p : spec.param_indices(m)) {
      param_partition[p] = module_partition[m];
      param_dist[p] = param_dist[p] || is_dist(m);
    }
  }
  for (std::size_t p = 0; p < spec.params.size(); ++p) {
    if (param_partition[p] < 0) continue;
    const double count = spec.params[p].bytes / 4.0;
    (param_dist[p] ? dist : repl)[static_cast<std::size_t>(param_partition[p])] += count;
  }

  const auto plan = plan_checkpoints(spec, module_partition, cfg);
  std::vector<double> act_plain(static_cast<std::size_t>(P), 0.0), act_ckpt(static_cast<std::size_t>(P), 0.0);
  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    if (plan.checkpointed[m]) continue;
    const double share = is_dist(m) && cfg.shard_tp_activations ? 1.0 / T : 1.0;
    act_plain[static_cast<std::size_t>(module_partition[m])] += spec.modules[m].activation_bytes * share;
  }
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    act_ckpt[static_cast<std::size_t>(plan.group_partition[g])] += plan.stored[g];
  }

  const double M = cfg.microbatches;
  const double rdp = cfg.shard_optimizer_state ? topo.rdp_degree() : 1.0;
  std::vector<RankMemory> out;
  for (int r = 0; r < topo.world_size(); ++r) {
    const auto& c = topo.coord(r);
    const auto k = static_cast<std::size_t>(c.pp_rank);
    RankMemory rm;
    rm.rank = r;
    rm.pp_rank = c.pp_rank;
    rm.tp_rank = c.tp_rank;
    const double local_count = repl[k] + dist[k] / T;
    rm.replicated_param_bytes = repl[k] * cfg.param_bytes_per_param();
    rm.distributed_param_bytes = dist[k] / T * cfg.param_bytes_per_param();
    rm.param_bytes = rm.replicated_param_bytes + rm.distributed_param_bytes;
    rm.grad_bytes = local_count * cfg.grad_bytes_per_param;
    rm.optimizer_bytes = local_count * cfg.optimizer_bytes_per_param / rdp;
    rm.checkpoint_activation_bytes = act_ckpt[k] * M * cfg.residency_factor();
    rm.activation_bytes = act_plain[k] * M + rm.checkpoint_activation_bytes;
    out.push_back(rm);
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<RankMemory>& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : report) {
    j[std::to_string(r.rank)] = {{"pp_rank", r.pp_rank},
                                 {"tp_rank", r.tp_rank},
                                 {"param_bytes", r.param_bytes},
                                 {"grad_bytes", r.grad_bytes},
                                 {"optimizer_bytes", r.optimizer_bytes},
                                 {"activation_bytes", r.activation_bytes},
                                 {"checkpoint_activation_bytes", r.checkpoint_activation_bytes},
                                 {"total_bytes", r.total()}};
  }
  return j;
}

}  // namespace mpsim
