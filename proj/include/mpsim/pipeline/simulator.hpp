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
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mpsim/auto_partitioner.hpp"
#include "mpsim/comm_model.hpp"
#include "mpsim/error.hpp"
#include "mpsim/model_graph.hpp"
#include "mpsim/pipeline/scheduler.hpp"
#include "mpsim/pipeline/static_mode.hpp"
#include "mpsim/pipeline/types.hpp"
#include "mpsim/topology.hpp"

namespace mpsim::pipeline {

/// Per-node quantities the simulator bills.
struct NodeCosts {
  std::vector<double> fwd_time;        // sum of member fwd_time
  std::vector<double> activation;      // bytes of the node's output tensor
  std::vector<bool> sequential;        // children may be grouped into range requests
  std::vector<double> recompute;       // extra backward time (activation checkpointing)
};

inline NodeCosts node_costs(const ModelSpec& spec, const NodeTree& tree) {
  NodeCosts c;
  c.fwd_time.assign(tree.size(), 0.0);
  c.activation.assign(tree.size(), 0.0);
  c.sequential.assign(tree.size(), false);
  c.recompute.assign(tree.size(), 0.0);
  for (std::size_t v = 0; v < tree.size(); ++v) {
    for (auto m : tree.nodes[v].modules) {
      const auto& d = spec.modules[m];
      c.fwd_time[v] += d.fwd_time;
      c.activation[v] += d.activation_bytes;
      c.sequential[v] = c.sequential[v] || d.is_sequential;
    }
  }
  return c;
}

struct StepOptions {
  Policy policy = Policy::Interleaved;
  int microbatches = 1;
  double bwd_factor = 2.0;
  const ReplayOrder* replay = nullptr;  // static-mode steady state
  const FastPlan* fast = nullptr;       // direct producer/consumer transfers
  double jitter = 0.0;                  // relative compute-time noise, uniform in [-jitter, jitter]
  std::uint64_t seed = 0;
  int step_index = 0;
};

struct StepResult {
  Timeline timeline;
  StepTrace trace;
  MessageCounts counts;
  std::vector<Decision> decisions;
  std::vector<double> busy;          // compute seconds per pp_rank
  std::vector<int> max_workers;      // worker entities ever created per pp_rank
  std::uint64_t calls_issued = 0;    // remote calls parked on a response
  std::uint64_t calls_resolved = 0;
  std::size_t residual_queue = 0;    // messages left in queues at step end
};

namespace detail {

struct Op {
  bool call = false;
  std::size_t node = 0;                // compute: the node; call: first node of the range
  double duration = 0.0;
  int target = 0;
  std::vector<std::size_t> range;      // call: sibling nodes covered
  std::size_t parent = 0;              // call: node issuing it
  std::pair<std::size_t, std::size_t> child_span{0, 0};
};

struct Hop {
  int rank = 0;
  std::vector<std::size_t> range;
  std::pair<std::size_t, std::size_t> child_span{0, 0};
};

struct Envelope {
  PipelineMessage msg;
  std::vector<std::size_t> range;
  std::vector<Hop> continuation;
  int reply_rank = 0;
  bool step_task = false;
  double bytes = 0.0;
  std::uint64_t seq = 0;
};

struct Worker {
  WorkerState state = WorkerState::Idle;
  std::vector<Op> program;
  std::size_t pc = 0;
  int microbatch = 0;
  Direction direction = Direction::Forward;
  std::string task_module;
  bool step_task = false;
  int reply_rank = 0;
  std::uint64_t reply_id = 0;
  std::vector<Hop> continuation;
  double response_bytes = 0.0;
  std::uint64_t awaiting = 0;
};

struct Server {
  std::deque<Envelope> queue;
  std::vector<Worker> workers;
  std::optional<std::size_t> executing;
  std::vector<TaskKey> started;
  std::size_t replay_pos = 0;
};

enum class EvType { Arrival, ComputeDone };

struct Event {
  double time = 0.0;
  int microbatch = 0;
  std::string module;
  std::uint64_t seq = 0;
  EvType type = EvType::Arrival;
  int rank = 0;
  std::size_t index = 0;  // in-flight slot or worker
  bool operator>(const Event& o) const {
    return std::tie(time, microbatch, module, seq) > std::tie(o.time, o.microbatch, o.module, o.seq);
  }
};

struct InFlight {
  Envelope env;
  std::optional<Route> route;
  int src_global = 0;
  int dst_global = 0;
};

class Simulation {
 public:
  Simulation(const ModelSpec& spec, const NodeTree& tree, const NodeCosts& costs, const Assignment& assign,
             const Topology& topo, const ClusterShape& cluster, const StepOptions& opt)
      : spec_(spec), tree_(tree), costs_(costs), assign_(assign), cluster_(cluster), opt_(opt),
        sched_(opt.microbatches),
        buffers_(topo.world_size(), cluster.d2d_buffer_bytes) {
    const int P = assign.num_partitions;
    if (opt.microbatches < 1) throw ContractViolation("microbatch count must be >= 1");
    if (assign.partition.size() != tree.size()) {
      throw ContractViolation("assignment covers " + std::to_string(assign.partition.size()) + " nodes, tree has " +
                              std::to_string(tree.size()));
    }
    for (std::size_t v = 0; v < tree.size(); ++v) {
      if (assign.partition[v] < 0 || assign.partition[v] >= P) {
        throw ContractViolation("module node '" + tree.nodes[v].id + "' is not assigned to a pipeline rank");
      }
    }
    if (topo.pp_degree() != P) {
      throw InfeasibleConfig("topology pp_degree " + std::to_string(topo.pp_degree()) + " differs from " +
                             std::to_string(P) + " partitions");
    }
    if (assign.partition[tree.root] != 0) throw ContractViolation("root node must live on pp_rank 0");
    for (int k = 0; k < P; ++k) global_.push_back(topo.rank_of(k, 0, 0));
    servers_.resize(static_cast<std::size_t>(P));
    result_.busy.assign(static_cast<std::size_t>(P), 0.0);
    result_.max_workers.assign(static_cast<std::size_t>(P), 0);
    result_.timeline.forward_done.assign(static_cast<std::size_t>(opt.microbatches), 0.0);
    result_.timeline.backward_done.assign(static_cast<std::size_t>(opt.microbatches), 0.0);
    result_.trace.server_order.resize(static_cast<std::size_t>(P));
    if (opt.replay) {
      if (opt.replay->server_order.size() != static_cast<std::size_t>(P)) {
        throw StaticModeViolation("replay order covers " + std::to_string(opt.replay->server_order.size()) +
                                  " servers, pipeline has " + std::to_string(P));
      }
      for (const auto& k : opt.replay->server_order[0]) {
        if (k.module == tree.nodes[tree.root].id && k.range_size == 1) root_order_.push_back(k);
      }
    }
  }

  StepResult run() {
    double now = 0.0;
    dispatch_all(now);
    while (!events_.empty()) {
      now = events_.top().time;
      while (!events_.empty() && events_.top().time == now) {
        Event e = events_.top();
        events_.pop();
        handle(e, now);
      }
      dispatch_all(now);
    }
    if (completed_ != 2 * opt_.microbatches) throw DeadlockError("pipeline step stalled", snapshot());
    for (const auto& s : servers_) result_.residual_queue += s.queue.size();
    result_.trace.makespan = result_.timeline.makespan;
    std::sort(chains_.begin(), chains_.end());
    chains_.erase(std::unique(chains_.begin(), chains_.end()), chains_.end());
    result_.trace.chains = chains_;
    for (std::size_t k = 0; k < servers_.size(); ++k) result_.trace.server_order[k] = servers_[k].started;
    return std::move(result_);
  }

 private:
  bool replaying() const { return opt_.replay != nullptr; }

  double jittered(double base, std::size_t node, int mb, Direction d) const {
    if (opt_.jitter == 0.0 || base == 0.0) return base;
    std::seed_seq seq{static_cast<std::uint32_t>(opt_.seed), static_cast<std::uint32_t>(opt_.seed >> 32),
                      static_cast<std::uint32_t>(opt_.step_index), static_cast<std::uint32_t>(node),
                      static_cast<std::uint32_t>(mb), static_cast<std::uint32_t>(d)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return base * (1.0 + opt_.jitter * u(rng));
  }

  double compute_time(std::size_t v, int mb, Direction d) const {
    const double f = costs_.fwd_time[v];
    if (d == Direction::Forward) return jittered(f, v, mb, d);
    return jittered(opt_.bwd_factor * f + costs_.recompute[v], v, mb, d);
  }

  // Children of v grouped into local nodes and remote ranges.
  struct Group {
    bool remote = false;
    int owner = 0;
    std::vector<std::size_t> nodes;
    std::pair<std::size_t, std::size_t> span{0, 0};
  };

  std::vector<Group> groups_of(std::size_t v, int rank) const {
    std::vector<Group> out;
    const auto& ch = tree_.nodes[v].children;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const int owner = assign_.partition[ch[i]];
      if (owner == rank) {
        out.push_back({false, owner, {ch[i]}, {i, i + 1}});
        continue;
      }
      if (costs_.sequential[v] && !out.empty() && out.back().remote && out.back().owner == owner) {
        out.back().nodes.push_back(ch[i]);
        out.back().span.second = i + 1;
        continue;
      }
      out.push_back({true, owner, {ch[i]}, {i, i + 1}});
    }
    return out;
  }

  void expand(std::size_t v, int rank, Direction d, int mb, std::vector<Op>& prog) const {
    auto groups = groups_of(v, rank);
    if (d == Direction::Forward) {
      prog.push_back(Op{false, v, compute_time(v, mb, d), rank, {}, v, {}});
    } else {
      std::reverse(groups.begin(), groups.end());
    }
    for (const auto& g : groups) {
      if (!g.remote) {
        expand(g.nodes.front(), rank, d, mb, prog);
        continue;
      }
      Op op;
      op.call = true;
      op.node = g.nodes.front();
      op.target = g.owner;
      op.range = g.nodes;
      op.parent = v;
      op.child_span = g.span;
      prog.push_back(std::move(op));
    }
    if (d == Direction::Backward) prog.push_back(Op{false, v, compute_time(v, mb, d), rank, {}, v, {}});
  }

  std::vector<Op> compile(const std::vector<std::size_t>& range, int rank, Direction d, int mb) const {
    std::vector<Op> prog;
    if (d == Direction::Forward) {
      for (auto v : range) expand(v, rank, d, mb, prog);
    } else {
      for (auto it = range.rbegin(); it != range.rend(); ++it) expand(*it, rank, d, mb, prog);
    }
    return prog;
  }

  std::string module_path(std::size_t v) const {
    std::string path = tree_.nodes[v].id;
    for (auto p = tree_.nodes[v].parent; p; p = tree_.nodes[*p].parent) path = tree_.nodes[*p].id + "/" + path;
    return path;
  }

  static TaskKey key_of(const Envelope& e) {
    return TaskKey{e.msg.microbatch, e.msg.direction, e.msg.module, e.range.size()};
  }

  // ---- messaging ----

  void send(int src, int dst, Envelope env, double now) {
    env.seq = next_seq_++;
    if (env.msg.kind == MessageKind::Request && !env.step_task) ++result_.counts.requests;
    if (env.msg.kind == MessageKind::Response) ++result_.counts.responses;
    InFlight f;
    f.src_global = global_[static_cast<std::size_t>(src)];
    f.dst_global = global_[static_cast<std::size_t>(dst)];
    double arrive = now;
    if (src != dst) {
      TensorStub stub{0, {}, static_cast<std::uint64_t>(env.bytes), Device::GPU};
      f.route = mpsim::route(stub, f.src_global, f.dst_global, cluster_, buffers_);
      arrive = now + transfer_time(cluster_, env.bytes, f.route->link, replaying());
      ++result_.counts.tensor_hops;
      if (!replaying()) ++result_.counts.metadata_rounds;
      result_.timeline.events.push_back(
          TimelineEvent{src, env.msg.microbatch, env.msg.module, env.msg.direction, EventKind::Comm, now, arrive});
      result_.timeline.makespan = std::max(result_.timeline.makespan, arrive);
    }
    Event ev{arrive, env.msg.microbatch, env.msg.module, env.seq, EvType::Arrival, dst, 0};
    f.env = std::move(env);
    in_flight_.push_back(std::move(f));
    ev.index = in_flight_.size() - 1;
    events_.push(std::move(ev));
  }

  Envelope request(const std::vector<std::size_t>& range, std::pair<std::size_t, std::size_t> span, Direction d,
                   int mb, int requester, std::uint64_t id, double bytes) const {
    Envelope e;
    e.msg.kind = MessageKind::Request;
    e.msg.request_id = id;
    e.msg.module = tree_.nodes[range.front()].id;
    if (range.size() > 1) e.msg.sequential_range = span;
    e.msg.direction = d;
    e.msg.payload = {TensorDesc{{static_cast<std::int64_t>(bytes / 4)}, static_cast<std::uint64_t>(bytes),
                                Device::GPU}};
    e.msg.microbatch = mb;
    e.msg.requester = requester;
    e.msg.module_path = module_path(range.front());
    e.msg.grad_enabled = true;
    e.range = range;
    e.reply_rank = requester;
    e.bytes = bytes;
    return e;
  }

  // Input bytes of a range in the given direction.
  double input_bytes(const std::vector<std::size_t>& range, Direction d) const {
    return d == Direction::Forward ? costs_.activation[range.front()] : costs_.activation[range.back()];
  }
  double output_bytes(const std::vector<std::size_t>& range, Direction d) const {
    return d == Direction::Forward ? costs_.activation[range.back()] : costs_.activation[range.front()];
  }

  // ---- event handling ----

  void handle(const Event& e, double now) {
    auto& srv = servers_[static_cast<std::size_t>(e.rank)];
    if (e.type == EvType::Arrival) {
      auto& f = in_flight_[e.index];
      if (f.route) release_route(*f.route, f.src_global, f.dst_global, buffers_);
      srv.queue.push_back(std::move(f.env));
      return;
    }
    auto& w = srv.workers[e.index];
    srv.executing.reset();
    w.pc += 1;
    advance(e.rank, e.index, now);
  }

  // Runs worker `wi` on `rank` from its pc until it computes, parks or finishes.
  void advance(int rank, std::size_t wi, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    auto& w = srv.workers[wi];
    w.state = WorkerState::Executing;
    srv.executing = wi;
    if (w.pc < w.program.size()) {
      const Op& op = w.program[w.pc];
      if (!op.call) {
        const double end = now + op.duration;
        result_.timeline.events.push_back(TimelineEvent{rank, w.microbatch, tree_.nodes[op.node].id, w.direction,
                                                        EventKind::Compute, now, end});
        result_.timeline.makespan = std::max(result_.timeline.makespan, end);
        result_.busy[static_cast<std::size_t>(rank)] += op.duration;
        events_.push(Event{end, w.microbatch, tree_.nodes[op.node].id, next_seq_++, EvType::ComputeDone, rank, wi});
        return;
      }
      issue_calls(rank, wi, now);
      return;
    }
    finish(rank, wi, now);
  }

  void issue_calls(int rank, std::size_t wi, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    auto& w = srv.workers[wi];
    const Op first = w.program[w.pc];
    std::size_t end = w.pc + 1;
    const bool run_start = w.pc == 0 || !w.program[w.pc - 1].call || w.program[w.pc - 1].parent != first.parent;
    if (run_start && !opt_.fast) {
      CallChain chain{tree_.nodes[first.parent].id, rank, w.direction, {}};
      for (std::size_t j = w.pc; j < w.program.size() && w.program[j].call && w.program[j].parent == first.parent;
           ++j) {
        chain.calls.emplace_back(tree_.nodes[w.program[j].node].id, w.program[j].target);
      }
      chains_.push_back(std::move(chain));
    }
    std::vector<Hop> continuation;
    if (opt_.fast) {
      while (end < w.program.size() && w.program[end].call && w.program[end].parent == first.parent &&
             opt_.fast->chained(w.direction, tree_.nodes[w.program[end - 1].node].id,
                                tree_.nodes[w.program[end].node].id)) {
        const auto& op = w.program[end];
        continuation.push_back(Hop{op.target, op.range, op.child_span});
        ++end;
      }
    }
    const std::uint64_t id = next_request_++;
    auto env = request(first.range, first.child_span, w.direction, w.microbatch, rank, id,
                       input_bytes(first.range, w.direction));
    env.continuation = std::move(continuation);
    w.pc = end;
    w.awaiting = id;
    w.state = WorkerState::Pending;
    srv.executing.reset();
    outstanding_.insert({rank, id});
    ++result_.calls_issued;
    send(rank, first.target, std::move(env), now);
  }

  void finish(int rank, std::size_t wi, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    auto& w = srv.workers[wi];
    w.state = WorkerState::Idle;
    srv.executing.reset();
    if (w.step_task) {
      const auto mb = static_cast<std::size_t>(w.microbatch);
      if (w.direction == Direction::Forward) {
        result_.timeline.forward_done[mb] = now;
        sched_.forward_done[mb] = true;
      } else {
        result_.timeline.backward_done[mb] = now;
      }
      ++completed_;
      return;
    }
    if (!w.continuation.empty()) {
      Hop next = w.continuation.front();
      std::vector<Hop> rest(w.continuation.begin() + 1, w.continuation.end());
      auto env = request(next.range, next.child_span, w.direction, w.microbatch, w.reply_rank, w.reply_id,
                         w.response_bytes);
      env.continuation = std::move(rest);
      send(rank, next.rank, std::move(env), now);
      return;
    }
    Envelope resp;
    resp.msg.kind = MessageKind::Response;
    resp.msg.request_id = w.reply_id;
    resp.msg.module = w.task_module;
    resp.msg.direction = w.direction;
    resp.msg.microbatch = w.microbatch;
    resp.msg.requester = w.reply_rank;
    resp.msg.payload = {TensorDesc{{static_cast<std::int64_t>(w.response_bytes / 4)},
                                   static_cast<std::uint64_t>(w.response_bytes), Device::GPU}};
    resp.bytes = w.response_bytes;
    resp.reply_rank = w.reply_rank;
    send(rank, w.reply_rank, std::move(resp), now);
  }

  // ---- server loop ----

  std::optional<std::size_t> pick(int rank) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    for (std::size_t i = 0; i < srv.queue.size(); ++i) {
      const auto& env = srv.queue[i];
      if (env.msg.kind == MessageKind::Response) return i;
      if (!replaying()) return i;
      const auto& order = opt_.replay->server_order[static_cast<std::size_t>(rank)];
      if (srv.replay_pos < order.size() && key_of(env) == order[srv.replay_pos]) return i;
    }
    return std::nullopt;
  }

  std::optional<Action> scheduler_action() const {
    if (!replaying()) return next_action(opt_.policy, sched_);
    if (root_pos_ >= root_order_.size()) return std::nullopt;
    const auto& k = root_order_[root_pos_];
    const Action a{k.microbatch, k.direction};
    if (a.direction == Direction::Backward && !sched_.forward_done[static_cast<std::size_t>(a.microbatch)]) {
      return std::nullopt;
    }
    return a;
  }

  void issue_step_task(double now) {
    auto a = scheduler_action();
    if (!a) return;
    decisions_note(*a, now);
    mark_issued(sched_, *a);
    if (replaying()) ++root_pos_;
    const std::size_t root = tree_.root;
    Envelope env = request({root}, {0, 1}, a->direction, a->microbatch, 0, next_request_++, 0.0);
    env.step_task = true;
    send(0, 0, std::move(env), now);
    pending_step_task_ = true;
  }

  void decisions_note(const Action& a, double now) {
    result_.decisions.push_back(Decision{now, a.microbatch, a.direction, sched_.ready_backwards(), sched_.next_forward});
  }

  void dispatch_all(double now) {
    for (int k = 0; k < static_cast<int>(servers_.size()); ++k) dispatch(k, now);
  }

  void dispatch(int rank, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    while (!srv.executing) {
      auto idx = pick(rank);
      if (!idx) {
        if (rank == 0 && !pending_step_task_) issue_step_task(now);
        return;
      }
      Envelope env = std::move(srv.queue[*idx]);
      srv.queue.erase(srv.queue.begin() + static_cast<std::ptrdiff_t>(*idx));
      if (env.msg.kind == MessageKind::Response) {
        resume(rank, env, now);
      } else {
        if (env.step_task) pending_step_task_ = false;
        start(rank, std::move(env), now);
      }
    }
  }

  void resume(int rank, const Envelope& env, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    if (!outstanding_.erase({rank, env.msg.request_id})) {
      throw ContractViolation("response " + std::to_string(env.msg.request_id) +
                              " does not match an outstanding request on pp_rank " + std::to_string(rank));
    }
    ++result_.calls_resolved;
    for (std::size_t i = 0; i < srv.workers.size(); ++i) {
      auto& w = srv.workers[i];
      if (w.state == WorkerState::Pending && w.awaiting == env.msg.request_id) {
        advance(rank, i, now);
        return;
      }
    }
    throw ContractViolation("no parked worker awaits response " + std::to_string(env.msg.request_id));
  }

  void start(int rank, Envelope env, double now) {
    auto& srv = servers_[static_cast<std::size_t>(rank)];
    const TaskKey key = key_of(env);
    srv.started.push_back(key);
    if (replaying()) ++srv.replay_pos;
    std::size_t wi = srv.workers.size();
    for (std::size_t i = 0; i < srv.workers.size(); ++i) {
      if (srv.workers[i].state == WorkerState::Idle) {
        wi = i;
        break;
      }
    }
    if (wi == srv.workers.size()) {
      srv.workers.emplace_back();
      result_.max_workers[static_cast<std::size_t>(rank)] = static_cast<int>(srv.workers.size());
    }
    auto& w = srv.workers[wi];
    w.program = compile(env.range, rank, env.msg.direction, env.msg.microbatch);
    w.pc = 0;
    w.microbatch = env.msg.microbatch;
    w.direction = env.msg.direction;
    w.task_module = env.msg.module;
    w.step_task = env.step_task;
    w.reply_rank = env.reply_rank;
    w.reply_id = env.msg.request_id;
    w.continuation = std::move(env.continuation);
    w.response_bytes = output_bytes(env.range, env.msg.direction);
    advance(rank, wi, now);
  }

  std::string snapshot() const {
    std::ostringstream os;
    for (std::size_t k = 0; k < servers_.size(); ++k) {
      const auto& s = servers_[k];
      os << "pp_rank " << k << ": queue=[";
      for (std::size_t i = 0; i < s.queue.size(); ++i) {
        const auto& m = s.queue[i].msg;
        os << (i ? ", " : "") << (m.kind == MessageKind::Request ? "req " : "resp ") << to_string(m.direction)
           << " mb" << m.microbatch << " " << m.module;
      }
      os << "] pending=[";
      bool first = true;
      for (const auto& w : s.workers) {
        if (w.state != WorkerState::Pending) continue;
        os << (first ? "" : ", ") << to_string(w.direction) << " mb" << w.microbatch << " " << w.task_module;
        first = false;
      }
      os << "]\n";
    }
    return os.str();
  }

  const ModelSpec& spec_;
  const NodeTree& tree_;
  const NodeCosts& costs_;
  const Assignment& assign_;
  const ClusterShape& cluster_;
  const StepOptions& opt_;

  ScheduleState sched_;
  D2DBuffers buffers_;
  std::vector<int> global_;
  std::vector<Server> servers_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::deque<InFlight> in_flight_;
  std::set<std::pair<int, std::uint64_t>> outstanding_;
  std::vector<CallChain> chains_;
  std::vector<TaskKey> root_order_;
  std::size_t root_pos_ = 0;
  bool pending_step_task_ = false;
  int completed_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_request_ = 1;
  StepResult result_;
};

}  // namespace detail

/// Simulates one training step (M forward and M backward passes) of the
/// module-server runtime.
inline StepResult run_step(const ModelSpec& spec, const NodeTree& tree, const NodeCosts& costs,
                           const Assignment& assignment, const Topology& topo, const ClusterShape& cluster,
                           const StepOptions& options) {
  detail::Simulation sim(spec, tree, costs, assignment, topo, cluster, options);
  return sim.run();
}

struct TrainingOptions {
  StepOptions step;
  int steps = 1;
  bool static_mode = false;
  bool fast_mode = false;
  int record_steps = 5;
};

struct TrainingResult {
  std::vector<StepResult> steps;
  std::optional<ReplayOrder> replay;
  std::optional<FastPlan> fast_plan;
};

/// Runs several steps. In static mode the first `record_steps` steps run the
/// dynamic protocol and are recorded; later steps replay the fastest recorded
/// order (and, with fast mode, use direct producer/consumer transfers).
inline TrainingResult run_training(const ModelSpec& spec, const NodeTree& tree, const NodeCosts& costs,
                                   const Assignment& assignment, const Topology& topo, const ClusterShape& cluster,
                                   const TrainingOptions& options) {
  if (options.fast_mode && !options.static_mode) throw InfeasibleConfig("fast_mode requires static_mode");
  if (options.steps < 1) throw InfeasibleConfig("steps must be >= 1");
  if (options.record_steps < 1) throw InfeasibleConfig("static mode needs at least one recorded step");
  TrainingResult out;
  std::vector<StepTrace> history;
  for (int s = 0; s < options.steps; ++s) {
    StepOptions opt = options.step;
    opt.step_index = s;
    if (options.static_mode && s >= options.record_steps) {
      if (!out.replay) {
        out.replay = record_and_replay(history);
        if (options.fast_mode) out.fast_plan = apply_fast_mode(history.front().chains);
      }
      opt.replay = &*out.replay;
      if (out.fast_plan) opt.fast = &*out.fast_plan;
    }
    out.steps.push_back(run_step(spec, tree, costs, assignment, topo, cluster, opt));
    if (options.static_mode && s < options.record_steps) history.push_back(out.steps.back().trace);
  }
  return out;
}

}  // namespace mpsim::pipeline
