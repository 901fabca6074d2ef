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


#include <gtest/gtest.h>

#include <random>

#include "mpsim/memory_model.hpp"
#include "mpsim/tp/replacement.hpp"
#include "support.hpp"

namespace mpsim {
namespace {

using Groups = std::vector<std::vector<std::string>>;

Groups group_names(std::vector<std::string> layers, std::vector<int> parts, const std::string& strategy) {
  return checkpoint_grouping(layers, parts, parse_checkpoint_strategy(strategy));
}

TEST(CheckpointGrouping, ContiguousSplitsAtPartitions) {
  EXPECT_EQ(group_names({"a", "b", "c", "d"}, {0, 0, 1, 1}, "contiguous"), (Groups{{"a", "b"}, {"c", "d"}}));
}

TEST(CheckpointGrouping, GroupKIsBestEffort) {
  EXPECT_EQ(group_names({"a", "b", "c", "d", "e"}, {0, 0, 1, 1, 1}, "group_3"), (Groups{{"a", "b"}, {"c", "d", "e"}}));
  EXPECT_EQ(group_names({"a", "b", "c", "d", "e"}, {0, 0, 0, 0, 0}, "group_2"),
            (Groups{{"a", "b"}, {"c", "d"}, {"e"}}));
}

TEST(CheckpointGrouping, EachIsSingletons) {
  EXPECT_EQ(group_names({"a", "b", "c"}, {0, 0, 0}, "each"), (Groups{{"a"}, {"b"}, {"c"}}));
}

TEST(CheckpointGrouping, StrategyParsing) {
  EXPECT_EQ(to_string(parse_checkpoint_strategy("group_4")), "group_4");
  EXPECT_EQ(to_string(parse_checkpoint_strategy("contiguous")), "contiguous");
  for (const char* bad : {"group_1", "group_", "group_x", "all", ""}) {
    EXPECT_THROW(parse_checkpoint_strategy(bad), SpecError) << bad;
  }
  EXPECT_THROW(checkpoint_grouping(std::span<const int>{}, CheckpointStrategy{}), ContractViolation);
}

TEST(CheckpointGrouping, GroupsPartitionSequence) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<int> parts(n);
    int p = 0;
    for (auto& x : parts) {
      if (rng() % 4 == 0) ++p;
      x = p;
    }
    for (const char* s : {"each", "contiguous", "group_2", "group_3", "group_5"}) {
      const auto strat = parse_checkpoint_strategy(s);
      const auto groups = checkpoint_grouping(parts, strat);
      std::size_t next = 0;
      for (const auto& g : groups) {
        for (auto i : g) {
          EXPECT_EQ(i, next++);
          EXPECT_EQ(parts[i], parts[g.front()]);
        }
        if (strat.kind == CheckpointStrategy::Kind::Group) {
          EXPECT_LE(g.size(), static_cast<std::size_t>(strat.k));
        }
      }
      EXPECT_EQ(next, n);
    }
  }
}

struct Fixture {
  ModelSpec spec = testing::uniform_transformer(8);
  NodeTree tree = build_node_tree(spec);
  Assignment assignment = partition_tree(compute_costs(tree, spec, 0.2), 2);
  Topology topo = build_topology(16, 2, 2, "cluster");

  std::vector<RankMemory> report(const MemoryConfig& cfg, const std::vector<bool>& dist = {}) const {
    return memory_report(spec, tree, assignment, topo, cfg, dist);
  }
};

TEST(MemoryReport, OptimizerShardingRatioIsRdpDegree) {
  const Fixture f;
  ASSERT_EQ(f.topo.rdp_degree(), 4);
  MemoryConfig off, on;
  on.shard_optimizer_state = true;
  const auto a = f.report(off), b = f.report(on);
  for (std::size_t r = 0; r < a.size(); ++r) {
    ASSERT_GT(b[r].optimizer_bytes, 0.0);
    EXPECT_EQ(a[r].optimizer_bytes / b[r].optimizer_bytes, 4.0);
  }
}

TEST(MemoryReport, Fp16HalvesParameters) {
  const Fixture f;
  MemoryConfig off, on;
  on.fp16_params = true;
  const auto a = f.report(off), b = f.report(on);
  for (std::size_t r = 0; r < a.size(); ++r) EXPECT_EQ(b[r].param_bytes * 2.0, a[r].param_bytes);
}

TEST(MemoryReport, OffloadResidency) {
  const Fixture f;
  MemoryConfig off;
  off.microbatches = 16;
  off.checkpoint_modules = {"layers"};
  MemoryConfig on = off;
  on.offload_activations = true;
  on.activation_loading_horizon = 4;
  EXPECT_EQ(on.residency_factor(), 0.25);
  const auto a = f.report(off), b = f.report(on);
  double total = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_DOUBLE_EQ(b[r].checkpoint_activation_bytes, a[r].checkpoint_activation_bytes * 0.25);
    total += a[r].checkpoint_activation_bytes;
  }
  EXPECT_GT(total, 0.0);
  MemoryConfig few = on;
  few.microbatches = 2;
  EXPECT_EQ(few.residency_factor(), 1.0);
}

TEST(MemoryReport, CheckpointingStoresOnlyBoundaries) {
  const Fixture f;
  MemoryConfig plain, each, contiguous;
  each.checkpoint_modules = {"layers"};
  contiguous.checkpoint_modules = {"layers"};
  contiguous.checkpoint_strategy = parse_checkpoint_strategy("contiguous");
  const auto a = f.report(plain), b = f.report(each), c = f.report(contiguous);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_LE(b[r].activation_bytes, a[r].activation_bytes);
    EXPECT_LE(c[r].activation_bytes, b[r].activation_bytes);
  }
  const auto parts = module_partitions(f.assignment, f.tree);
  const auto plan = plan_checkpoints(f.spec, parts, contiguous);
  EXPECT_EQ(plan.groups.size(), 2u);
  EXPECT_TRUE(plan.checkpointed[f.spec.index_of("layers.3.mlp")]);
  EXPECT_FALSE(plan.checkpointed[f.spec.index_of("model")]);
  const auto extra = recompute_times(f.spec, f.tree, plan);
  EXPECT_GT(extra[f.tree.node_of_module[f.spec.index_of("layers.0.mlp")]], 0.0);
  MemoryConfig missing;
  missing.checkpoint_modules = {"nope"};
  EXPECT_THROW(f.report(missing), SpecError);
}

TEST(MemoryReport, TensorParallelParamsSplitAcrossRanks) {
  const Fixture f;
  const auto plan = tp::plan_replacement(f.spec, tp::default_registry(), {"layers"});
  const auto dist = tp::distributed_modules(f.spec, plan);
  const auto a = f.report({}), b = f.report({}, dist);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_DOUBLE_EQ(b[r].param_bytes * 2.0, a[r].param_bytes);
    EXPECT_DOUBLE_EQ(b[r].distributed_param_bytes, b[r].param_bytes);
  }
}

TEST(MemoryReport, Monotonicity) {
  const Fixture f;
  const auto dist = tp::distributed_modules(f.spec, tp::plan_replacement(f.spec, tp::default_registry(), {"layers.0"}));
  for (int mask = 0; mask < 8; ++mask) {
    MemoryConfig base;
    base.microbatches = 8;
    base.checkpoint_modules = {"layers"};
    base.shard_optimizer_state = mask & 1;
    base.offload_activations = mask & 2;
    base.fp16_params = mask & 4;
    const auto before = f.report(base, dist);
    for (int flag = 0; flag < 3; ++flag) {
      MemoryConfig more = base;
      if (flag == 0) more.shard_optimizer_state = true;
      if (flag == 1) more.offload_activations = true;
      if (flag == 2) more.fp16_params = true;
      const auto after = f.report(more, dist);
      for (std::size_t r = 0; r < before.size(); ++r) {
        EXPECT_LE(after[r].param_bytes, before[r].param_bytes);
        EXPECT_LE(after[r].grad_bytes, before[r].grad_bytes);
        EXPECT_LE(after[r].optimizer_bytes, before[r].optimizer_bytes);
        EXPECT_LE(after[r].activation_bytes, before[r].activation_bytes);
      }
    }
  }
}

TEST(MemoryReport, ConservationOverOnePipelineAndTensorGroup) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = testing::random_spec(rng, 10 + trial);
    const auto tree = build_node_tree(spec);
    const int P = 1 + trial % 3, T = 1 + trial % 2;
    const auto assignment = partition_tree(compute_costs(tree, spec, 0.3), P);
    const auto topo = build_topology(P * T * 2, P, T, "cluster");
    std::set<std::string> marks;
    for (const auto& m : spec.modules) {
      if (rng() % 3 == 0) marks.insert(m.id);
    }
    ModelSpec kinded = spec;
    for (auto& m : kinded.modules) m.kind = "Linear";
    kinded.validate();
    const auto dist = tp::distributed_modules(kinded, tp::plan_replacement(kinded, tp::default_registry(), marks));
    const auto report = memory_report(spec, tree, assignment, topo, MemoryConfig{}, dist);
    double total = 0.0;
    for (const auto& p : spec.params) total += p.bytes;
    double sum = 0.0;
    const int rdp0 = 0;
    for (int k = 0; k < P; ++k) {
      for (int t = 0; t < T; ++t) {
        const auto& rm = report[static_cast<std::size_t>(topo.rank_of(k, t, rdp0))];
        sum += rm.distributed_param_bytes + (t == 0 ? rm.replicated_param_bytes : 0.0);
      }
    }
    EXPECT_NEAR(sum, total, 1e-9 * total);
  }
}

TEST(MemoryConfig, Validation) {
  MemoryConfig c;
  c.activation_loading_horizon = 0;
  EXPECT_THROW(c.validate(), InfeasibleConfig);
  c = {};
  c.checkpoint_strategy = {CheckpointStrategy::Kind::Group, 1};
  EXPECT_THROW(c.validate(), InfeasibleConfig);
}

TEST(MemoryReport, JsonKeyedByRank) {
  const Fixture f;
  const auto j = to_json(f.report({}));
  EXPECT_EQ(j.size(), 16u);
  EXPECT_TRUE(j.contains("0"));
  EXPECT_TRUE(j["15"].contains("optimizer_bytes"));
}

}  // namespace
}  // namespace mpsim
