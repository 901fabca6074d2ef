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

#include <optional>
#include <vector>

#include "mpsim/pipeline/types.hpp"

namespace mpsim::pipeline {

/// pp_rank 0's view of step-level progress.
struct ScheduleState {
  explicit ScheduleState(int microbatches)
      : microbatches(microbatches),
        forward_done(static_cast<std::size_t>(microbatches), false),
        backward_issued(static_cast<std::size_t>(microbatches), false) {}

  int microbatches;
  int next_forward = 0;
  std::vector<bool> forward_done;
  std::vector<bool> backward_issued;

  bool all_forwards_done() const {
    return std::all_of(forward_done.begin(), forward_done.end(), [](bool b) { return b; });
  }
  bool all_issued() const {
    return next_forward == microbatches &&
           std::all_of(backward_issued.begin(), backward_issued.end(), [](bool b) { return b; });
  }
  /// Microbatches whose forward finished and whose backward was not issued.
  std::vector<int> ready_backwards() const {
    std::vector<int> out;
    for (int m = 0; m < microbatches; ++m) {
      if (forward_done[static_cast<std::size_t>(m)] && !backward_issued[static_cast<std::size_t>(m)]) out.push_back(m);
    }
    return out;
  }
};

struct Action {
  int microbatch = 0;
  Direction direction = Direction::Forward;
  bool operator==(const Action&) const = default;
};

/// Next step-level task pp_rank 0 should enqueue for itself, or nothing if
/// no task can start right now.
///
/// simple: every forward in order, then (once all forwards have finished)
/// every backward in order. interleaved: a backward-ready microbatch always
/// goes first (lowest index); otherwise the next forward.
inline std::optional<Action> next_action(Policy policy, const ScheduleState& s) {
  const auto ready = s.ready_backwards();
  if (policy == Policy::Interleaved) {
    if (!ready.empty()) return Action{ready.front(), Direction::Backward};
    if (s.next_forward < s.microbatches) return Action{s.next_forward, Direction::Forward};
    return std::nullopt;
  }
  if (s.next_forward < s.microbatches) return Action{s.next_forward, Direction::Forward};
  if (s.all_forwards_done() && !ready.empty()) return Action{ready.front(), Direction::Backward};
  return std::nullopt;
}

inline void mark_issued(ScheduleState& s, const Action& a) {
  if (a.direction == Direction::Forward) {
    s.next_forward = std::max(s.next_forward, a.microbatch + 1);
  } else {
    s.backward_issued[static_cast<std::size_t>(a.microbatch)] = true;
  }
}

/// Full issue order a policy produces when every forward finishes before
/// the next decision (useful for reasoning about the degenerate cases).
inline std::vector<Action> issue_sequence_instant(Policy policy, int microbatches) {
  ScheduleState s(microbatches);
  std::vector<Action> out;
  while (auto a = next_action(policy, s)) {
    out.push_back(*a);
    mark_issued(s, *a);
    if (a->direction == Direction::Forward && policy == Policy::Interleaved) {
      s.forward_done[static_cast<std::size_t>(a->microbatch)] = true;
    }
    if (policy == Policy::Simple && s.next_forward == microbatches) {
      std::fill(s.forward_done.begin(), s.forward_done.end(), true);
    }
  }
  return out;
}

}  // namespace mpsim::pipeline
