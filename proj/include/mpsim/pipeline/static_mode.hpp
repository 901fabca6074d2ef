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
#include <limits>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mpsim/error.hpp"
#include "mpsim/pipeline/types.hpp"

namespace mpsim::pipeline {

/// Task order each module server follows once static mode replays.
struct ReplayOrder {
  std::size_t source_trace = 0;
  double source_makespan = 0.0;
  std::vector<std::vector<TaskKey>> server_order;
};

/// Picks the order of the fastest recorded step. Every trace must contain the
/// same multiset of requests; otherwise the model's control flow depends on
/// the data and replay would be unsound.
inline ReplayOrder record_and_replay(std::span<const StepTrace> history) {
  if (history.empty()) throw ContractViolation("record_and_replay needs at least one trace");
  const auto reference = history.front().request_multiset();
  for (std::size_t i = 1; i < history.size(); ++i) {
    const auto other = history[i].request_multiset();
    if (other == reference) continue;
    std::vector<TaskKey> extra, missing;
    std::set_difference(other.begin(), other.end(), reference.begin(), reference.end(), std::back_inserter(extra));
    std::set_difference(reference.begin(), reference.end(), other.begin(), other.end(), std::back_inserter(missing));
    std::string what = "trace " + std::to_string(i) + " diverges from trace 0: ";
    if (!extra.empty()) what += "extra request '" + describe(extra.front()) + "'";
    else what += "missing request '" + describe(missing.front()) + "'";
    throw StaticModeViolation(what);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].makespan < history[best].makespan) best = i;
  }
  return ReplayOrder{best, history[best].makespan, history[best].server_order};
}

/// Rewired message plan: consecutive remote calls whose output feeds the
/// next call directly.
struct FastPlan {
  // (direction, producer call, consumer call) keyed by first node id
  std::set<std::tuple<Direction, std::string, std::string>> shortcuts;
  std::vector<CallChain> chains;
  std::size_t hops_before = 0;
  std::size_t hops_after = 0;

  bool chained(Direction d, const std::string& producer, const std::string& consumer) const {
    return shortcuts.count({d, producer, consumer}) > 0;
  }
};

inline std::size_t chain_hops_round_trip(const CallChain& c) {
  std::size_t h = 0;
  for (const auto& [node, rank] : c.calls) h += rank != c.parent_rank ? 2 : 0;
  return h;
}

inline std::size_t chain_hops_direct(const CallChain& c) {
  if (c.calls.empty()) return 0;
  std::size_t h = c.calls.front().second != c.parent_rank ? 1 : 0;
  for (std::size_t i = 1; i < c.calls.size(); ++i) h += c.calls[i].second != c.calls[i - 1].second ? 1 : 0;
  h += c.calls.back().second != c.parent_rank ? 1 : 0;
  return h;
}

inline FastPlan apply_fast_mode(std::span<const CallChain> first_step) {
  FastPlan plan;
  std::set<CallChain> unique(first_step.begin(), first_step.end());
  for (const auto& c : unique) {
    plan.chains.push_back(c);
    plan.hops_before += chain_hops_round_trip(c);
    plan.hops_after += chain_hops_direct(c);
    for (std::size_t i = 1; i < c.calls.size(); ++i) {
      plan.shortcuts.insert({c.direction, c.calls[i - 1].first, c.calls[i].first});
    }
  }
  return plan;
}

}  // namespace mpsim::pipeline
