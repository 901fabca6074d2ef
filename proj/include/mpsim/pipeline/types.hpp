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
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/comm_model.hpp"
#include "mpsim/error.hpp"

namespace mpsim::pipeline {

enum class Direction { Forward, Backward };
enum class Policy { Simple, Interleaved };
enum class MessageKind { Request, Response };
enum class WorkerState { Pending, Idle, Executing };
enum class EventKind { Compute, Comm };

inline const char* to_string(Direction d) { return d == Direction::Forward ? "fwd" : "bwd"; }
inline const char* to_string(Policy p) { return p == Policy::Simple ? "simple" : "interleaved"; }
inline const char* to_string(EventKind k) { return k == EventKind::Compute ? "compute" : "comm"; }

inline Policy policy_from_string(const std::string& s) {
  if (s == "simple") return Policy::Simple;
  if (s == "interleaved") return Policy::Interleaved;
  throw SpecError(SpecError::Kind::BadValue, s, "pipeline must be 'simple' or 'interleaved', got '" + s + "'");
}

/// Control message exchanged between module servers. Tensor contents are
/// never simulated; the payload only carries descriptors.
struct PipelineMessage {
  MessageKind kind = MessageKind::Request;
  std::uint64_t request_id = 0;
  std::string module;  // first module node of the request
  std::optional<std::pair<std::size_t, std::size_t>> sequential_range;  // child index range [begin, end)
  Direction direction = Direction::Forward;
  std::vector<TensorDesc> payload;
  int microbatch = 0;
  int requester = 0;  // pp_rank that issued the original request
  std::string module_path;
  bool autocast = false;
  bool grad_enabled = true;
  bool checkpoint_enabled = false;
};

struct TimelineEvent {
  int rank = 0;
  int microbatch = 0;
  std::string module;
  Direction direction = Direction::Forward;
  EventKind kind = EventKind::Compute;
  double t_start = 0.0;
  double t_end = 0.0;
};

struct Timeline {
  std::vector<TimelineEvent> events;
  double makespan = 0.0;
  /// Completion time of each microbatch's forward / backward pass at pp_rank 0.
  std::vector<double> forward_done;
  std::vector<double> backward_done;

  double forward_makespan() const {
    double m = 0.0;
    for (double t : forward_done) m = std::max(m, t);
    return m;
  }
};

struct MessageCounts {
  std::uint64_t requests = 0;
  std::uint64_t responses = 0;
  std::uint64_t metadata_rounds = 0;
  std::uint64_t tensor_hops = 0;
};

/// One scheduling decision taken by pp_rank 0.
struct Decision {
  double time = 0.0;
  int microbatch = 0;
  Direction direction = Direction::Forward;
  std::vector<int> ready_backwards;  // microbatches backward-ready at that instant
  int forwards_issued_before = 0;
};

/// Identity of a task a module server starts, independent of timing.
struct TaskKey {
  int microbatch = 0;
  Direction direction = Direction::Forward;
  std::string module;
  std::size_t range_size = 1;
  auto tie() const { return std::tie(microbatch, direction, module, range_size); }
  bool operator==(const TaskKey& o) const { return tie() == o.tie(); }
  bool operator<(const TaskKey& o) const { return tie() < o.tie(); }
};

inline std::string describe(const TaskKey& k) {
  return std::string(to_string(k.direction)) + " mb" + std::to_string(k.microbatch) + " " + k.module +
         (k.range_size > 1 ? "[+" + std::to_string(k.range_size - 1) + "]" : "");
}

/// Run of consecutive remote calls a worker issued with no local compute in
/// between: the producer/consumer structure fast mode shortcuts.
struct CallChain {
  std::string parent;
  int parent_rank = 0;
  Direction direction = Direction::Forward;
  std::vector<std::pair<std::string, int>> calls;  // (first node of call, callee rank)
  auto tie() const { return std::tie(parent, parent_rank, direction, calls); }
  bool operator<(const CallChain& o) const { return tie() < o.tie(); }
  bool operator==(const CallChain& o) const { return tie() == o.tie(); }
};

/// What static mode records about one step.
struct StepTrace {
  double makespan = 0.0;
  std::vector<std::vector<TaskKey>> server_order;  // per pp_rank, in start order
  std::vector<CallChain> chains;                   // unique chains observed

  std::vector<TaskKey> request_multiset() const {
    std::vector<TaskKey> all;
    for (const auto& r : server_order) all.insert(all.end(), r.begin(), r.end());
    std::sort(all.begin(), all.end());
    return all;
  }
};

inline std::string timeline_csv(const Timeline& tl) {
  std::ostringstream os;
  os << "rank,microbatch,module,direction,kind,t_start,t_end\n";
  char buf[64];
  for (const auto& e : tl.events) {
    os << e.rank << ',' << e.microbatch << ',' << e.module << ',' << to_string(e.direction) << ','
       << to_string(e.kind) << ',';
    std::snprintf(buf, sizeof buf, "%.12g,%.12g", e.t_start, e.t_end);
    os << buf << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const Timeline& tl) {
  nlohmann::json evs = nlohmann::json::array();
  for (const auto& e : tl.events) {
    evs.push_back({{"rank", e.rank}, {"microbatch", e.microbatch}, {"module", e.module},
                   {"direction", to_string(e.direction)}, {"kind", to_string(e.kind)},
                   {"t_start", e.t_start}, {"t_end", e.t_end}});
  }
  return {{"makespan", tl.makespan}, {"forward_done", tl.forward_done},
          {"backward_done", tl.backward_done}, {"events", evs}};
}

inline nlohmann::json to_json(const MessageCounts& c) {
  return {{"requests", c.requests}, {"responses", c.responses},
          {"metadata_rounds", c.metadata_rounds}, {"tensor_hops", c.tensor_hops}};
}

/// Bars for a Gantt rendering of the timeline.
inline nlohmann::json gantt_json(const Timeline& tl) {
  nlohmann::json bars = nlohmann::json::array();
  for (const auto& e : tl.events) {
    bars.push_back({{"rank", e.rank}, {"t0", e.t_start}, {"t1", e.t_end},
                    {"label", std::string(e.direction == Direction::Forward ? "Req::FWD " : "Req::BWD ") +
                                  e.module + " mb" + std::to_string(e.microbatch)},
                    {"kind", to_string(e.kind)}});
  }
  return bars;
}

}  // namespace mpsim::pipeline
