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
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/error.hpp"

namespace mpsim {

struct ModuleDesc {
  std::string id;
  std::optional<std::string> parent;
  std::vector<std::string> param_ids;
  double fwd_time = 0.0;          // seconds, exclusive of submodules
  double activation_bytes = 0.0;  // output activation per microbatch
  bool is_sequential = false;
  std::string kind;  // module class name; only used for tensor-parallel replacement
};

struct ParamDesc {
  std::string id;
  double bytes = 0.0;
};

/// A validated module hierarchy. Construct through load_model_spec() or
/// fill the public vectors and call validate().
class ModelSpec {
 public:
  std::vector<ModuleDesc> modules;
  std::vector<ParamDesc> params;
  std::vector<std::string> trace_order;

  /// Checks every structural invariant and builds the lookup tables.
  /// Throws SpecError naming the offending id.
  void validate();

  std::size_t root() const { return root_; }
  std::size_t index_of(const std::string& module_id) const;
  std::size_t param_index_of(const std::string& param_id) const;
  bool has_module(const std::string& module_id) const { return module_index_.count(module_id) != 0; }

  std::optional<std::size_t> parent_of(std::size_t m) const { return parent_[m]; }
  /// Children of a module, ordered by first appearance in the trace.
  const std::vector<std::size_t>& children_of(std::size_t m) const { return children_[m]; }
  /// Execution-order key: first trace position, untraced modules after all
  /// traced ones in declaration order.
  std::size_t order_key(std::size_t m) const { return order_key_[m]; }
  const std::vector<std::size_t>& param_indices(std::size_t m) const { return param_idx_[m]; }
  std::size_t depth(std::size_t m) const { return depth_[m]; }

  /// Modules of the subtree rooted at m (m first, pre-order in trace order).
  std::vector<std::size_t> subtree(std::size_t m) const {
    std::vector<std::size_t> out;
    std::vector<std::size_t> stack{m};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      out.push_back(cur);
      const auto& ch = children_[cur];
      for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return out;
  }

  bool any_fwd_time() const {
    return std::any_of(modules.begin(), modules.end(), [](const ModuleDesc& m) { return m.fwd_time > 0.0; });
  }

 private:
  std::size_t root_ = 0;
  std::unordered_map<std::string, std::size_t> module_index_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::vector<std::optional<std::size_t>> parent_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::vector<std::size_t>> param_idx_;
  std::vector<std::size_t> order_key_;
  std::vector<std::size_t> depth_;
};

inline std::size_t ModelSpec::index_of(const std::string& module_id) const {
  auto it = module_index_.find(module_id);
  if (it == module_index_.end()) {
    throw SpecError(SpecError::Kind::BadValue, module_id, "unknown module '" + module_id + "'");
  }
  return it->second;
}

inline std::size_t ModelSpec::param_index_of(const std::string& param_id) const {
  auto it = param_index_.find(param_id);
  if (it == param_index_.end()) {
    throw SpecError(SpecError::Kind::UnknownParam, param_id, "unknown parameter '" + param_id + "'");
  }
  return it->second;
}

inline void ModelSpec::validate() {
  using K = SpecError::Kind;
  const std::size_t n = modules.size();
  if (n == 0) throw SpecError(K::BadRoot, "", "model has no modules");

  module_index_.clear();
  param_index_.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = modules[i];
    if (m.id.empty()) throw SpecError(K::BadValue, "", "module with empty id");
    if (!module_index_.emplace(m.id, i).second) {
      throw SpecError(K::DuplicateId, m.id, "duplicate module id '" + m.id + "'");
    }
    if (!(m.fwd_time >= 0.0)) throw SpecError(K::BadValue, m.id, "negative fwd_time on '" + m.id + "'");
    if (!(m.activation_bytes >= 0.0)) {
      throw SpecError(K::BadValue, m.id, "negative activation_bytes on '" + m.id + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!param_index_.emplace(p.id, i).second) {
      throw SpecError(K::DuplicateId, p.id, "duplicate parameter id '" + p.id + "'");
    }
    if (!(p.bytes > 0.0)) throw SpecError(K::BadValue, p.id, "parameter '" + p.id + "' must have bytes > 0");
  }

  parent_.assign(n, std::nullopt);
  param_idx_.assign(n, {});
  std::optional<std::size_t> root;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = modules[i];
    if (m.parent) {
      auto it = module_index_.find(*m.parent);
      if (it == module_index_.end()) {
        throw SpecError(K::DanglingParent, *m.parent,
                        "module '" + m.id + "' references undefined parent '" + *m.parent + "'");
      }
      if (it->second == i) throw SpecError(K::Cycle, m.id, "module '" + m.id + "' is its own parent");
      parent_[i] = it->second;
    } else {
      if (root) {
        throw SpecError(K::BadRoot, m.id,
                        "more than one root module ('" + modules[*root].id + "', '" + m.id + "')");
      }
      root = i;
    }
    std::set<std::size_t> seen;
    for (const auto& pid : m.param_ids) {
      auto it = param_index_.find(pid);
      if (it == param_index_.end()) {
        throw SpecError(K::UnknownParam, pid, "module '" + m.id + "' references undefined parameter '" + pid + "'");
      }
      if (seen.insert(it->second).second) param_idx_[i].push_back(it->second);
    }
  }
  if (!root) throw SpecError(K::BadRoot, "", "model has no root module");
  root_ = *root;

  // Every module must reach the root; anything else sits on a parent cycle.
  depth_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cur = i;
    std::size_t steps = 0;
    while (parent_[cur]) {
      cur = *parent_[cur];
      if (++steps > n) throw SpecError(K::Cycle, modules[i].id, "module '" + modules[i].id + "' is on a parent cycle");
    }
    depth_[i] = steps;
  }

  std::vector<std::optional<std::size_t>> first(n);
  for (std::size_t pos = 0; pos < trace_order.size(); ++pos) {
    auto it = module_index_.find(trace_order[pos]);
    if (it == module_index_.end()) {
      throw SpecError(K::UnknownTraceId, trace_order[pos], "trace_order mentions unknown module '" + trace_order[pos] + "'");
    }
    if (!first[it->second]) first[it->second] = pos;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!first[i] || !parent_[i]) continue;
    const auto& pf = first[*parent_[i]];
    if (pf && *pf > *first[i]) {
      throw SpecError(K::TraceOrder, modules[i].id,
                      "module '" + modules[i].id + "' is traced before its parent '" + modules[*parent_[i]].id + "'");
    }
  }
  order_key_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) order_key_[i] = first[i] ? *first[i] : trace_order.size() + i;

  children_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    if (parent_[i]) children_[*parent_[i]].push_back(i);
  }
  for (auto& ch : children_) {
    std::sort(ch.begin(), ch.end(), [&](std::size_t a, std::size_t b) { return order_key_[a] < order_key_[b]; });
  }
}

/// Parses the model description JSON and validates it.
inline ModelSpec load_model_spec(const std::string& text) {
  using K = SpecError::Kind;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(K::Parse, "", std::string("model JSON parse error: ") + e.what());
  }
  ModelSpec spec;
  try {
    if (!j.is_object() || !j.contains("modules")) throw SpecError(K::Parse, "", "model JSON needs a 'modules' array");
    for (const auto& jm : j.at("modules")) {
      ModuleDesc m;
      m.id = jm.at("id").get<std::string>();
      if (jm.contains("parent") && !jm.at("parent").is_null()) m.parent = jm.at("parent").get<std::string>();
      if (jm.contains("param_ids")) m.param_ids = jm.at("param_ids").get<std::vector<std::string>>();
      m.fwd_time = jm.value("fwd_time", 0.0);
      m.activation_bytes = jm.value("activation_bytes", 0.0);
      m.is_sequential = jm.value("is_sequential", false);
      m.kind = jm.value("kind", std::string{});
      spec.modules.push_back(std::move(m));
    }
    if (j.contains("params")) {
      for (const auto& jp : j.at("params")) {
        spec.params.push_back({jp.at("id").get<std::string>(), jp.at("bytes").get<double>()});
      }
    }
    if (j.contains("trace_order")) spec.trace_order = j.at("trace_order").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(K::Parse, "", std::string("model JSON schema error: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : spec.modules) {
    nlohmann::json jm{{"id", m.id},
                      {"parent", m.parent ? nlohmann::json(*m.parent) : nlohmann::json(nullptr)},
                      {"param_ids", m.param_ids},
                      {"fwd_time", m.fwd_time},
                      {"activation_bytes", m.activation_bytes},
                      {"is_sequential", m.is_sequential}};
    if (!m.kind.empty()) jm["kind"] = m.kind;
    mods.push_back(std::move(jm));
  }
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : spec.params) ps.push_back({{"id", p.id}, {"bytes", p.bytes}});
  return {{"modules", mods}, {"params", ps}, {"trace_order", spec.trace_order}};
}

// ---------------------------------------------------------------------------
// ModuleNode tree

struct ModuleNode {
  std::string id;                    // smallest member module id
  std::vector<std::size_t> modules;  // member module indices, ordered by trace
  std::vector<std::size_t> children; // node indices, execution order
  std::optional<std::size_t> parent;
  std::size_t order_key = 0;
};

struct NodeTree {
  std::vector<ModuleNode> nodes;
  std::size_t root = 0;
  std::vector<std::size_t> node_of_module;

  std::size_t size() const { return nodes.size(); }

  std::vector<std::size_t> bfs_order() const {
    std::vector<std::size_t> order{root};
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (auto c : nodes[order[i]].children) order.push_back(c);
    }
    return order;
  }

  std::size_t index_of(const std::string& node_id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].id == node_id) return i;
    }
    throw ContractViolation("unknown node '" + node_id + "'");
  }
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

/// Collapses modules that share parameters into ModuleNodes and links them
/// into a tree following the module hierarchy.
///
/// When a node has several candidate parents, only candidates on a shortest
/// path from the root node are kept (this guarantees a tree even when
/// sharing folds ancestors and descendants together) and among those the one
/// reached through the lexicographically smallest parent module id wins.
inline NodeTree build_node_tree(const ModelSpec& spec) {
  const std::size_t n = spec.modules.size();
  detail::DisjointSets sets(n + spec.params.size());
  for (std::size_t m = 0; m < n; ++m) {
    for (auto p : spec.param_indices(m)) sets.unite(m, n + p);
  }

  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t m = 0; m < n; ++m) components[sets.find(m)].push_back(m);

  NodeTree tree;
  tree.node_of_module.assign(n, 0);
  std::vector<ModuleNode> nodes;
  for (auto& [rep, members] : components) {
    ModuleNode node;
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return spec.order_key(a) < spec.order_key(b); });
    node.modules = members;
    node.id = spec.modules[members.front()].id;
    node.order_key = spec.order_key(members.front());
    for (auto m : members) node.id = std::min(node.id, spec.modules[m].id);
    nodes.push_back(std::move(node));
  }
  std::sort(nodes.begin(), nodes.end(), [](const ModuleNode& a, const ModuleNode& b) {
    return a.order_key != b.order_key ? a.order_key < b.order_key : a.id < b.id;
  });
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (auto m : nodes[i].modules) tree.node_of_module[m] = i;
  }
  tree.root = tree.node_of_module[spec.root()];

  // Contracted hierarchy: candidate (parent module id, parent node) per node.
  const std::size_t k = nodes.size();
  std::vector<std::vector<std::pair<std::string, std::size_t>>> candidates(k);
  std::vector<std::set<std::size_t>> out_edges(k);
  for (std::size_t m = 0; m < n; ++m) {
    auto p = spec.parent_of(m);
    if (!p) continue;
    auto child_node = tree.node_of_module[m];
    auto parent_node = tree.node_of_module[*p];
    if (child_node == parent_node) continue;
    candidates[child_node].emplace_back(spec.modules[*p].id, parent_node);
    out_edges[parent_node].insert(child_node);
  }
  constexpr auto kUnreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(k, kUnreached);
  std::deque<std::size_t> frontier{tree.root};
  dist[tree.root] = 0;
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    for (auto nxt : out_edges[cur]) {
      if (dist[nxt] == kUnreached) {
        dist[nxt] = dist[cur] + 1;
        frontier.push_back(nxt);
      }
    }
  }
  for (std::size_t v = 0; v < k; ++v) {
    if (v == tree.root) continue;
    std::optional<std::pair<std::string, std::size_t>> best;
    for (const auto& cand : candidates[v]) {
      if (dist[cand.second] + 1 != dist[v]) continue;
      if (!best || cand.first < best->first) best = cand;
    }
    nodes[v].parent = best->second;
    nodes[best->second].children.push_back(v);
  }
  for (auto& node : nodes) {
    std::sort(node.children.begin(), node.children.end(), [&](std::size_t a, std::size_t b) {
      return nodes[a].order_key != nodes[b].order_key ? nodes[a].order_key < nodes[b].order_key
                                                      : nodes[a].id < nodes[b].id;
    });
  }
  tree.nodes = std::move(nodes);
  return tree;
}

// ---------------------------------------------------------------------------
// Costs

inline constexpr double kCostFloor = 1e-9;

struct CostedTree {
  NodeTree tree;
  double alpha = 0.5;
  std::vector<double> module_memory;   // w(m), min-max normalized
  std::vector<double> module_compute;  // psi(m), min-max normalized
  std::vector<double> module_cost;     // alpha*w + (1-alpha)*psi
  std::vector<double> node_memory;     // sum of w over member modules
  std::vector<double> node_compute;
  std::vector<double> subtree_cost;    // C(n), unnormalized
  std::vector<double> cost;            // c(n) = C(n) / C(root)

  /// Cost attributable to the node itself: c(n) minus its children.
  double local_cost(std::size_t n) const {
    double s = cost[n];
    for (auto c : tree.nodes[n].children) s -= cost[c];
    return s;
  }
};

namespace detail {

inline std::vector<double> min_max_normalize(const std::vector<double>& v) {
  if (v.empty()) return {};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  if (*hi > *lo) {
    const double span = *hi - *lo;
    std::transform(v.begin(), v.end(), out.begin(), [&](double x) { return (x - *lo) / span; });
  } else {
    // all equal: every module weighs the same
    std::fill(out.begin(), out.end(), *hi > 0.0 ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace detail

/// Blended cost of a single module from its normalized memory and compute.
inline double blend_cost(double memory, double compute, double alpha) {
  return alpha * memory + (1.0 - alpha) * compute;
}

/// Memory cost w(m): bytes of every distinct parameter in the subtree of m,
/// plus the module's own activation bytes. Compute cost psi(m): fwd_time when
/// the model carries timings, otherwise the number of descendant modules.
/// Both are min-max normalized over all modules before blending.
inline CostedTree compute_costs(const NodeTree& tree, const ModelSpec& spec, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw SpecError(SpecError::Kind::BadValue, "alpha", "alpha must lie in [0, 1]");
  }
  const std::size_t n = spec.modules.size();
  std::vector<double> raw_w(n, 0.0), raw_psi(n, 0.0);
  const bool timed = spec.any_fwd_time();

  // post-order accumulation of distinct subtree params
  std::vector<std::vector<std::size_t>> sub_params(n);
  std::vector<std::size_t> desc(n, 0);
  auto order = spec.subtree(spec.root());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto m = *it;
    std::vector<std::size_t> acc = spec.param_indices(m);
    std::sort(acc.begin(), acc.end());
    for (auto c : spec.children_of(m)) {
      std::vector<std::size_t> merged;
      std::set_union(acc.begin(), acc.end(), sub_params[c].begin(), sub_params[c].end(), std::back_inserter(merged));
      acc.swap(merged);
      desc[m] += 1 + desc[c];
    }
    double bytes = 0.0;
    for (auto p : acc) bytes += spec.params[p].bytes;
    raw_w[m] = bytes + spec.modules[m].activation_bytes;
    raw_psi[m] = timed ? spec.modules[m].fwd_time : static_cast<double>(desc[m]);
    sub_params[m] = std::move(acc);
  }

  CostedTree ct;
  ct.tree = tree;
  ct.alpha = alpha;
  ct.module_memory = detail::min_max_normalize(raw_w);
  ct.module_compute = detail::min_max_normalize(raw_psi);
  ct.module_cost.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    ct.module_cost[m] = blend_cost(ct.module_memory[m], ct.module_compute[m], alpha);
  }

  const std::size_t k = tree.size();
  ct.node_memory.assign(k, 0.0);
  ct.node_compute.assign(k, 0.0);
  std::vector<double> local(k, 0.0);
  for (std::size_t v = 0; v < k; ++v) {
    for (auto m : tree.nodes[v].modules) {
      ct.node_memory[v] += ct.module_memory[m];
      ct.node_compute[v] += ct.module_compute[m];
      local[v] += ct.module_cost[m];
    }
  }
  const double total = std::accumulate(local.begin(), local.end(), 0.0);
  if (!(total > 0.0)) {
    throw SpecError(SpecError::Kind::BadValue, spec.modules[spec.root()].id,
                    "model has zero total cost; nothing to partition");
  }
  // Floor each node's own share so every subtree cost is strictly positive
  // and strictly larger than the sum of its children.
  for (auto& l : local) l = std::max(l, kCostFloor * total);

  ct.subtree_cost.assign(k, 0.0);
  auto bfs = tree.bfs_order();
  for (auto it = bfs.rbegin(); it != bfs.rend(); ++it) {
    double c = local[*it];
    for (auto ch : tree.nodes[*it].children) c += ct.subtree_cost[ch];
    ct.subtree_cost[*it] = c;
  }
  ct.cost.resize(k);
  const double root_cost = ct.subtree_cost[tree.root];
  for (std::size_t v = 0; v < k; ++v) ct.cost[v] = ct.subtree_cost[v] / root_cost;
  ct.cost[tree.root] = 1.0;
  return ct;
}

inline nlohmann::json to_json(const CostedTree& ct, const ModelSpec& spec) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t v = 0; v < ct.tree.size(); ++v) {
    const auto& node = ct.tree.nodes[v];
    nlohmann::json mods = nlohmann::json::array();
    for (auto m : node.modules) mods.push_back(spec.modules[m].id);
    nlohmann::json kids = nlohmann::json::array();
    for (auto c : node.children) kids.push_back(ct.tree.nodes[c].id);
    nodes.push_back({{"id", node.id},
                     {"modules", mods},
                     {"children", kids},
                     {"memory", ct.node_memory[v]},
                     {"compute", ct.node_compute[v]},
                     {"C", ct.subtree_cost[v]},
                     {"c", ct.cost[v]}});
  }
  return {{"root", ct.tree.nodes[ct.tree.root].id}, {"alpha", ct.alpha}, {"nodes", nodes}};
}

}  // namespace mpsim
