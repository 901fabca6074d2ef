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
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "mpsim/pipeline/simulator.hpp"
#include "mpsim/pipeline/types.hpp"

namespace mpsim::pipeline {

/// Overlapping compute events on one rank, plus events with t_end < t_start.
inline std::vector<std::string> exclusivity_violations(const Timeline& tl) {
  std::vector<std::string> out;
  std::map<int, std::vector<const TimelineEvent*>> by_rank;
  for (const auto& e : tl.events) {
    if (e.t_end < e.t_start) out.push_back("event " + e.module + " ends before it starts");
    if (e.kind == EventKind::Compute) by_rank[e.rank].push_back(&e);
  }
  for (auto& [rank, evs] : by_rank) {
    std::stable_sort(evs.begin(), evs.end(), [](auto* a, auto* b) {
      return std::tie(a->t_start, a->t_end) < std::tie(b->t_start, b->t_end);
    });
    for (std::size_t i = 1; i < evs.size(); ++i) {
      if (evs[i]->t_start < evs[i - 1]->t_end) {
        out.push_back("pp_rank " + std::to_string(rank) + ": " + evs[i]->module + " overlaps " + evs[i - 1]->module);
      }
    }
  }
  return out;
}

/// Every node must run exactly once per microbatch and direction.
inline std::vector<std::string> completeness_violations(const Timeline& tl, const NodeTree& tree, int microbatches) {
  std::vector<std::string> out;
  std::map<std::tuple<std::string, Direction, int>, int> seen;
  for (const auto& e : tl.events) {
    if (e.kind == EventKind::Compute) ++seen[{e.module, e.direction, e.microbatch}];
  }
  for (const auto& n : tree.nodes) {
    for (Direction d : {Direction::Forward, Direction::Backward}) {
      for (int m = 0; m < microbatches; ++m) {
        auto it = seen.find({n.id, d, m});
        const int count = it == seen.end() ? 0 : it->second;
        if (count != 1) {
          out.push_back(n.id + " " + to_string(d) + " mb" + std::to_string(m) + " ran " + std::to_string(count) +
                        " times");
        }
      }
    }
  }
  if (tl.events.size() > 0) {
    std::size_t compute = 0;
    for (const auto& e : tl.events) compute += e.kind == EventKind::Compute ? 1 : 0;
    const std::size_t expected = tree.size() * 2 * static_cast<std::size_t>(microbatches);
    if (compute != expected) out.push_back("compute event count " + std::to_string(compute) + " != " + std::to_string(expected));
  }
  return out;
}

/// simple: every forward is issued before any backward.
inline std::vector<std::string> simple_order_violations(const std::vector<Decision>& log) {
  std::vector<std::string> out;
  bool seen_backward = false;
  double first_backward = 0.0;
  for (const auto& d : log) {
    if (d.direction == Direction::Backward) {
      if (!seen_backward) first_backward = d.time;
      seen_backward = true;
    } else if (seen_backward) {
      out.push_back("forward mb" + std::to_string(d.microbatch) + " issued after a backward");
    }
  }
  if (seen_backward) {
    for (const auto& d : log) {
      if (d.direction == Direction::Forward && d.time > first_backward) {
        out.push_back("forward mb" + std::to_string(d.microbatch) + " issued later than the first backward");
      }
    }
  }
  return out;
}

/// interleaved: a backward-ready microbatch always wins, lowest index first.
inline std::vector<std::string> interleaved_violations(const std::vector<Decision>& log) {
  std::vector<std::string> out;
  for (const auto& d : log) {
    if (d.ready_backwards.empty()) continue;
    if (d.direction != Direction::Backward || d.microbatch != d.ready_backwards.front()) {
      out.push_back("at t=" + std::to_string(d.time) + " issued " + to_string(d.direction) + " mb" +
                    std::to_string(d.microbatch) + " while backward mb" + std::to_string(d.ready_backwards.front()) +
                    " was ready");
    }
  }
  return out;
}

/// Every parked call got exactly one response and no message was left behind.
inline std::vector<std::string> conservation_violations(const StepResult& r, bool fast) {
  std::vector<std::string> out;
  if (r.calls_issued != r.calls_resolved) {
    out.push_back(std::to_string(r.calls_issued) + " calls issued, " + std::to_string(r.calls_resolved) + " resolved");
  }
  if (!fast && r.counts.requests != r.counts.responses) {
    out.push_back(std::to_string(r.counts.requests) + " requests, " + std::to_string(r.counts.responses) + " responses");
  }
  if (r.residual_queue != 0) out.push_back(std::to_string(r.residual_queue) + " messages left in queues");
  return out;
}

/// Multiset of compute events, ignoring when they ran.
inline std::vector<std::tuple<int, int, std::string, Direction>> compute_multiset(const Timeline& tl) {
  std::vector<std::tuple<int, int, std::string, Direction>> out;
  for (const auto& e : tl.events) {
    if (e.kind == EventKind::Compute) out.emplace_back(e.rank, e.microbatch, e.module, e.direction);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mpsim::pipeline
