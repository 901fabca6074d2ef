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

#include "mpsim/pipeline_engine.hpp"
#include "support.hpp"

namespace mpsim::pipeline {
namespace {

using testing::finish;
using testing::module;

struct Harness {
  ModelSpec spec;
  NodeTree tree;
  NodeCosts costs;
  Assignment assignment;
  Topology topo;
  ClusterShape cluster;

  Harness(ModelSpec s, Assignment a, ClusterShape c = testing::zero_comm_cluster())
      : spec(std::move(s)), tree(build_node_tree(spec)), costs(node_costs(spec, tree)), assignment(std::move(a)),
        topo(build_topology(assignment.num_partitions, assignment.num_partitions, 1, "DPT")), cluster(c) {}

  StepResult step(StepOptions o) const { return run_step(spec, tree, costs, assignment, topo, cluster, o); }
  TrainingResult train(TrainingOptions o) const {
    return run_training(spec, tree, costs, assignment, topo, cluster, o);
  }
};

Harness chain_harness(int P, double f, double act = 0.0, bool sequential = false,
                  ClusterShape c = testing::zero_comm_cluster()) {
  auto spec = testing::chain_model(P, f, act, sequential);
  const auto tree = build_node_tree(spec);
  return Harness(spec, testing::chain_assignment(tree, P), c);
}

Harness partitioned(ModelSpec spec, int P, double alpha = 0.2, ClusterShape c = ClusterShape{}) {
  const auto tree = build_node_tree(spec);
  const auto ct = compute_costs(tree, spec, alpha);
  return Harness(spec, partition_tree(ct, P), c);
}

std::string actions(const std::vector<Action>& a) {
  std::string s;
  for (const auto& x : a) s += (x.direction == Direction::Forward ? "f" : "b") + std::to_string(x.microbatch) + " ";
  return s;
}

TEST(NextAction, SingleMicrobatch) {
  EXPECT_EQ(actions(issue_sequence_instant(Policy::Simple, 1)), "f0 b0 ");
  EXPECT_EQ(actions(issue_sequence_instant(Policy::Interleaved, 1)), "f0 b0 ");
}

TEST(NextAction, SimpleOrder) {
  EXPECT_EQ(actions(issue_sequence_instant(Policy::Simple, 3)), "f0 f1 f2 b0 b1 b2 ");
}

TEST(NextAction, InterleavedPrefersReadyBackward) {
  ScheduleState s(3);
  mark_issued(s, {0, Direction::Forward});
  mark_issued(s, {1, Direction::Forward});
  EXPECT_EQ(next_action(Policy::Interleaved, s)->microbatch, 2);
  s.forward_done[1] = true;
  s.forward_done[0] = true;
  const auto a = next_action(Policy::Interleaved, s);
  EXPECT_EQ(a->direction, Direction::Backward);
  EXPECT_EQ(a->microbatch, 0);
  // simple waits for every forward
  EXPECT_EQ(next_action(Policy::Simple, s)->direction, Direction::Forward);
  mark_issued(s, {2, Direction::Forward});
  EXPECT_FALSE(next_action(Policy::Simple, s).has_value());
}

TEST(NextAction, NoneWhenEverythingIssued) {
  ScheduleState s(2);
  for (int m = 0; m < 2; ++m) {
    mark_issued(s, {m, Direction::Forward});
    s.forward_done[static_cast<std::size_t>(m)] = true;
    mark_issued(s, {m, Direction::Backward});
  }
  EXPECT_FALSE(next_action(Policy::Interleaved, s).has_value());
  EXPECT_FALSE(next_action(Policy::Simple, s).has_value());
}

TEST(RunStep, SinglePartitionMakespan) {
  const double f = 0.25;
  const auto s = chain_harness(1, f);
  for (auto policy : {Policy::Simple, Policy::Interleaved}) {
    const auto r = s.step({.policy = policy, .microbatches = 2});
    EXPECT_DOUBLE_EQ(r.timeline.makespan, 6.0 * f);
    for (const auto& e : r.timeline.events) EXPECT_EQ(e.kind, EventKind::Compute);
    EXPECT_EQ(r.counts.requests, 0u);
    EXPECT_EQ(r.counts.tensor_hops, 0u);
  }
}

TEST(RunStep, PipelineFill) {
  const double f = 1.0;
  for (int P : {2, 3, 4, 8}) {
    for (int M : {1, 2, 4, 16}) {
      const auto s = chain_harness(P, f);
      const auto r = s.step({.policy = Policy::Simple, .microbatches = M});
      EXPECT_DOUBLE_EQ(r.timeline.forward_makespan(), (M + P - 1) * f) << "P=" << P << " M=" << M;
    }
  }
}

TEST(RunStep, InterleavedInterleaves) {
  const auto s = partitioned(testing::uniform_transformer(8, 1e-3), 4);
  const auto r = s.step({.policy = Policy::Interleaved, .microbatches = 16});
  EXPECT_TRUE(interleaved_violations(r.decisions).empty());
  // some backward starts before the last forward issue at rank 0
  double last_fwd = 0.0, first_bwd = 1e300;
  for (const auto& d : r.decisions) {
    if (d.direction == Direction::Forward) last_fwd = std::max(last_fwd, d.time);
    else first_bwd = std::min(first_bwd, d.time);
  }
  EXPECT_LT(first_bwd, last_fwd);
  const auto simple = s.step({.policy = Policy::Simple, .microbatches = 16});
  EXPECT_TRUE(simple_order_violations(simple.decisions).empty());
}

TEST(RunStep, RejectsBadAssignments) {
  auto s = chain_harness(2, 1.0);
  auto bad = s;
  bad.assignment.partition[1] = 7;
  EXPECT_THROW(bad.step({}), ContractViolation);
  auto moved = s;
  moved.assignment.partition[moved.tree.root] = 1;
  EXPECT_THROW(moved.step({}), ContractViolation);
  auto mismatch = s;
  mismatch.topo = build_topology(4, 4, 1, "DPT");
  EXPECT_THROW(mismatch.step({}), InfeasibleConfig);
  EXPECT_THROW(s.train({.step = {}, .steps = 2, .static_mode = false, .fast_mode = true}), InfeasibleConfig);
}

TEST(RunStep, TimelineCsvColumns) {
  const auto r = chain_harness(2, 0.5, 1e6, false, ClusterShape{}).step({.microbatches = 2});
  const auto csv = timeline_csv(r.timeline);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "rank,microbatch,module,direction,kind,t_start,t_end");
  EXPECT_NE(csv.find(",comm,"), std::string::npos);
  EXPECT_NE(csv.find(",compute,"), std::string::npos);
}

StepTrace trace_with(double makespan, std::vector<TaskKey> keys) {
  StepTrace t;
  t.makespan = makespan;
  t.server_order = {std::move(keys)};
  return t;
}

TEST(RecordAndReplay, PicksFastestTrace) {
  const std::vector<TaskKey> keys{{0, Direction::Forward, "a", 1}, {0, Direction::Backward, "a", 1}};
  std::vector<StepTrace> h;
  for (double m : {10.0, 9.0, 11.0, 9.5, 12.0}) h.push_back(trace_with(m, keys));
  const auto r = record_and_replay(h);
  EXPECT_EQ(r.source_trace, 1u);
  EXPECT_EQ(r.source_makespan, 9.0);
}

TEST(RecordAndReplay, IdenticalTracesAnyOrder) {
  const std::vector<TaskKey> keys{{0, Direction::Forward, "a", 1}};
  std::vector<StepTrace> h(5, trace_with(3.0, keys));
  EXPECT_EQ(record_and_replay(h).server_order, h[0].server_order);
}

TEST(RecordAndReplay, DivergentTraceNamesRequest) {
  const std::vector<TaskKey> keys{{0, Direction::Forward, "a", 1}};
  std::vector<StepTrace> h(5, trace_with(3.0, keys));
  h[3].server_order[0].push_back({1, Direction::Forward, "gate", 1});
  try {
    record_and_replay(h);
    FAIL() << "expected StaticModeViolation";
  } catch (const StaticModeViolation& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("trace 3"), std::string::npos);
    EXPECT_NE(what.find("gate"), std::string::npos);
    EXPECT_NE(what.find("extra"), std::string::npos);
  }
  EXPECT_THROW(record_and_replay(std::vector<StepTrace>{}), ContractViolation);
}

TEST(FastMode, ChainHopCounts) {
  for (int k : {1, 2, 3, 5, 8}) {
    CallChain c{"root", 0, Direction::Forward, {}};
    for (int i = 1; i <= k; ++i) c.calls.emplace_back("c" + std::to_string(i), i);
    const auto plan = apply_fast_mode(std::vector<CallChain>{c});
    EXPECT_EQ(plan.hops_before, static_cast<std::size_t>(2 * k));
    EXPECT_EQ(plan.hops_after, static_cast<std::size_t>(k + 1));
    EXPECT_EQ(plan.shortcuts.size(), static_cast<std::size_t>(k - 1));
  }
}

TEST(FastMode, SameRankNeighboursNeedNoIntermediateHop) {
  CallChain c{"root", 0, Direction::Forward, {{"a", 1}, {"b", 1}}};
  const auto plan = apply_fast_mode(std::vector<CallChain>{c});
  // round trip: a->root, root->b are the intermediate hops; direct: none
  EXPECT_EQ(plan.hops_before, 4u);
  EXPECT_EQ(plan.hops_after, 2u);
  EXPECT_TRUE(plan.chained(Direction::Forward, "a", "b"));
}

TEST(FastMode, LocalModelUnchanged) {
  const auto s = chain_harness(1, 1.0);
  const auto t = s.train({.step = {.microbatches = 2}, .steps = 3, .static_mode = true, .fast_mode = true,
                          .record_steps = 1});
  ASSERT_TRUE(t.fast_plan.has_value());
  EXPECT_TRUE(t.fast_plan->shortcuts.empty());
  EXPECT_EQ(t.fast_plan->hops_before, t.fast_plan->hops_after);
}

/// root on rank 0 with k children, child i on rank i.
Harness star_harness(int k, double f, double act) {
  ModelSpec s;
  s.modules.push_back(module("root", std::nullopt));
  for (int i = 1; i <= k; ++i) {
    s.modules.push_back(module("c" + std::to_string(i), "root", {"p" + std::to_string(i)}, f, act));
    s.params.push_back({"p" + std::to_string(i), 4.0});
  }
  auto spec = finish(s);
  const auto tree = build_node_tree(spec);
  Assignment a;
  a.num_partitions = k + 1;
  a.partition.assign(tree.size(), 0);
  a.devices.assign(tree.size(), {});
  for (int i = 1; i <= k; ++i) a.partition[tree.index_of("c" + std::to_string(i))] = i;
  return Harness(spec, a, ClusterShape{});
}

TEST(FastMode, SimulatedHopsDropFromTwoKToKPlusOne) {
  for (int k : {2, 3, 5}) {
    const auto s = star_harness(k, 1e-3, 4096.0);
    const int M = 3;
    const auto t = s.train({.step = {.microbatches = M}, .steps = 6, .static_mode = true, .fast_mode = true});
    const auto before = t.steps.front().counts.tensor_hops;
    const auto after = t.steps.back().counts.tensor_hops;
    // per microbatch and direction
    EXPECT_EQ(before, static_cast<std::uint64_t>(2 * M * 2 * k)) << "k=" << k;
    EXPECT_EQ(after, static_cast<std::uint64_t>(2 * M * (k + 1))) << "k=" << k;
    EXPECT_EQ(compute_multiset(t.steps.front().timeline), compute_multiset(t.steps.back().timeline));
    EXPECT_TRUE(exclusivity_violations(t.steps.back().timeline).empty());
    EXPECT_TRUE(conservation_violations(t.steps.back(), true).empty());
    EXPECT_LT(t.steps.back().timeline.makespan, t.steps.front().timeline.makespan);
  }
}

TEST(RunStep, SequentialSameRankChildrenShareOneRequest) {
  ModelSpec s;
  s.modules = {module("root", std::nullopt, {}, 0.0, 0.0, true), module("a", "root", {"pa"}, 1.0, 64.0),
               module("b", "root", {"pb"}, 1.0, 64.0)};
  s.params = {{"pa", 4.0}, {"pb", 4.0}};
  auto spec = finish(s);
  const auto tree = build_node_tree(spec);
  Assignment a;
  a.num_partitions = 2;
  a.partition.assign(tree.size(), 1);
  a.partition[tree.root] = 0;
  a.devices.assign(tree.size(), {});
  const Harness setup(spec, a, ClusterShape{});
  const auto r = setup.step({.microbatches = 1});
  EXPECT_EQ(r.counts.requests, 2u);  // one forward range, one backward range
  EXPECT_EQ(r.counts.tensor_hops, 4u);
}

TEST(StaticMode, MetadataDropsToZeroAndComputeUnchanged) {
  const auto s = partitioned(testing::uniform_transformer(12, 1e-3), 4);
  const auto t = s.train({.step = {.microbatches = 4}, .steps = 8, .static_mode = true});
  ASSERT_TRUE(t.replay.has_value());
  EXPECT_LT(t.replay->source_trace, 5u);
  for (int i = 0; i < 5; ++i) EXPECT_GT(t.steps[static_cast<std::size_t>(i)].counts.metadata_rounds, 0u);
  for (std::size_t i = 5; i < t.steps.size(); ++i) {
    EXPECT_EQ(t.steps[i].counts.metadata_rounds, 0u);
    EXPECT_EQ(compute_multiset(t.steps[i].timeline), compute_multiset(t.steps[0].timeline));
    EXPECT_TRUE(exclusivity_violations(t.steps[i].timeline).empty());
    EXPECT_TRUE(completeness_violations(t.steps[i].timeline, s.tree, 4).empty());
    EXPECT_LE(t.steps[i].timeline.makespan, t.steps[0].timeline.makespan);
  }
}

TEST(StaticMode, ReplayFollowsRecordedOrderUnderJitter) {
  const auto s = partitioned(testing::uniform_transformer(12, 1e-3), 4);
  const auto t = s.train({.step = {.microbatches = 4, .jitter = 0.3, .seed = 17}, .steps = 8, .static_mode = true});
  for (std::size_t i = 5; i < t.steps.size(); ++i) {
    EXPECT_EQ(t.steps[i].trace.server_order, t.replay->server_order);
  }
}

TEST(RunStep, JitterIsSeeded) {
  const auto s = partitioned(testing::uniform_transformer(6, 1e-3), 2);
  const StepOptions o{.microbatches = 3, .jitter = 0.2, .seed = 5};
  EXPECT_EQ(timeline_csv(s.step(o).timeline), timeline_csv(s.step(o).timeline));
  StepOptions other = o;
  other.seed = 6;
  EXPECT_NE(timeline_csv(s.step(o).timeline), timeline_csv(s.step(other).timeline));
}

struct Case {
  int seed;
  int P;
  int M;
  Policy policy;
};

class RandomCorpus : public ::testing::TestWithParam<Case> {};

TEST_P(RandomCorpus, Invariants) {
  const auto c = GetParam();
  std::mt19937_64 rng(static_cast<std::uint64_t>(c.seed));
  const auto spec = testing::random_spec(rng, 8 + static_cast<std::size_t>(c.seed) % 40);
  const auto s = partitioned(spec, c.P);
  const StepOptions o{.policy = c.policy, .microbatches = c.M};
  const auto r = s.step(o);
  EXPECT_TRUE(exclusivity_violations(r.timeline).empty());
  EXPECT_TRUE(completeness_violations(r.timeline, s.tree, c.M).empty());
  EXPECT_TRUE(conservation_violations(r, false).empty());
  if (c.policy == Policy::Simple) {
    EXPECT_TRUE(simple_order_violations(r.decisions).empty());
  } else {
    EXPECT_TRUE(interleaved_violations(r.decisions).empty());
  }
  double makespan = 0.0;
  for (const auto& e : r.timeline.events) {
    EXPECT_GE(e.t_end, e.t_start);
    EXPECT_GE(e.rank, 0);
    EXPECT_LT(e.rank, c.P);
    makespan = std::max(makespan, e.t_end);
  }
  EXPECT_DOUBLE_EQ(r.timeline.makespan, makespan);
  EXPECT_EQ(timeline_csv(s.step(o).timeline), timeline_csv(r.timeline));

  const auto t = s.train({.step = o, .steps = 7, .static_mode = true, .fast_mode = true});
  for (const auto& st : t.steps) {
    EXPECT_EQ(compute_multiset(st.timeline), compute_multiset(r.timeline));
    EXPECT_TRUE(exclusivity_violations(st.timeline).empty());
    EXPECT_TRUE(conservation_violations(st, true).empty());
  }
  EXPECT_EQ(t.steps.back().counts.metadata_rounds, 0u);
  EXPECT_LE(t.steps.back().counts.tensor_hops, t.steps.front().counts.tensor_hops);
}

std::vector<Case> corpus() {
  std::vector<Case> out;
  int seed = 0;
  for (int P : {1, 2, 3, 4}) {
    for (int M : {1, 3, 4}) {
      for (auto policy : {Policy::Simple, Policy::Interleaved}) {
        for (int rep = 0; rep < 3; ++rep) out.push_back({seed++, P, M, policy});
      }
    }
  }
  return out;
}

INSTANTIATE_TEST_SUITE_P(Corpus, RandomCorpus, ::testing::ValuesIn(corpus()));

}  // namespace
}  // namespace mpsim::pipeline
