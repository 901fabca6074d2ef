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


// Builders shared by the unit tests and the acceptance runner.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "mpsim.hpp"

namespace mpsim::testing {

inline ModuleDesc module(std::string id, std::optional<std::string> parent, std::vector<std::string> params = {},
                         double fwd = 0.0, double act = 0.0, bool sequential = false, std::string kind = "") {
  return ModuleDesc{std::move(id), std::move(parent), std::move(params), fwd, act, sequential, std::move(kind)};
}

/// Fills trace_order with a pre-order walk in declaration order and validates.
inline ModelSpec finish(ModelSpec s) {
  if (s.trace_order.empty()) {
    std::map<std::string, std::vector<std::string>> kids;
    std::string root;
    for (const auto& m : s.modules) {
      if (m.parent) kids[*m.parent].push_back(m.id);
      else root = m.id;
    }
    std::vector<std::string> stack{root};
    while (!stack.empty()) {
      auto id = stack.back();
      stack.pop_back();
      s.trace_order.push_back(id);
      auto& k = kids[id];
      for (auto it = k.rbegin(); it != k.rend(); ++it) stack.push_back(*it);
    }
  }
  s.validate();
  return s;
}

/// root -> s0 .. s{P-1}, each stage with its own parameter and time f.
inline ModelSpec chain_model(int P, double f, double act_bytes = 0.0, bool sequential = false) {
  ModelSpec s;
  s.modules.push_back(module("root", std::nullopt, {}, 0.0, 0.0, sequential));
  for (int i = 0; i < P; ++i) {
    const std::string id = "s" + std::to_string(i);
    s.modules.push_back(module(id, "root", {"p" + std::to_string(i)}, f, act_bytes));
    s.params.push_back({"p" + std::to_string(i), 4.0});
  }
  return finish(std::move(s));
}

/// Stage s{i} on partition i, everything else on 0.
inline Assignment chain_assignment(const NodeTree& tree, int P) {
  Assignment a;
  a.num_partitions = P;
  a.partition.assign(tree.size(), 0);
  a.devices.assign(tree.size(), {});
  for (std::size_t v = 0; v < tree.size(); ++v) {
    const auto& id = tree.nodes[v].id;
    if (id.size() > 1 && id[0] == 's') a.partition[v] = std::stoi(id.substr(1));
  }
  return a;
}

inline ClusterShape zero_comm_cluster() {
  ClusterShape c;
  for (auto& l : c.links) l.latency_s = 0.0;
  c.metadata_latency_s = 0.0;
  return c;
}

/// Random hierarchy of n modules. Parameters are sometimes shared between
/// two modules so that some module nodes merge several modules.
inline ModelSpec random_spec(std::mt19937_64& rng, std::size_t n, bool timed = true) {
  ModelSpec s;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::uniform_int_distribution<int> coin(0, 9);
  s.modules.push_back(module("m0", std::nullopt, {}, timed ? u(rng) : 0.0, u(rng) * 100.0, coin(rng) < 3));
  std::size_t next_param = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t parent = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    auto m = module("m" + std::to_string(i), "m" + std::to_string(parent), {}, timed ? u(rng) : 0.0, u(rng) * 100.0,
                    coin(rng) < 3);
    const int own = coin(rng) < 7 ? 1 : 0;
    for (int k = 0; k < own; ++k) {
      const std::string pid = "w" + std::to_string(next_param++);
      s.params.push_back({pid, 4.0 * std::uniform_int_distribution<int>(1, 1000)(rng)});
      m.param_ids.push_back(pid);
    }
    if (coin(rng) == 0 && !s.params.empty()) {
      m.param_ids.push_back(s.params[std::uniform_int_distribution<std::size_t>(0, s.params.size() - 1)(rng)].id);
    }
    std::sort(m.param_ids.begin(), m.param_ids.end());
    m.param_ids.erase(std::unique(m.param_ids.begin(), m.param_ids.end()), m.param_ids.end());
    s.modules.push_back(std::move(m));
  }
  if (s.params.empty()) {
    s.params.push_back({"w0", 4.0});
    s.modules.back().param_ids.push_back("w0");
  }
  return finish(std::move(s));
}

/// Transformer with `layers` identical blocks under a sequential container.
/// Every leaf carries its own weights; times are per-module self times.
inline ModelSpec uniform_transformer(int layers, double layer_time = 1.0) {
  ModelSpec s;
  const double attn_bytes = 4.0 * 4 * 1024 * 1024, mlp_bytes = 4.0 * 8 * 1024 * 1024;
  s.modules.push_back(module("model", std::nullopt));
  s.modules.push_back(module("layers", "model", {}, 0.0, 0.0, true, "Transformer"));
  for (int i = 0; i < layers; ++i) {
    const std::string l = "layers." + std::to_string(i);
    s.modules.push_back(module(l, "layers", {}, 0.0, 1024.0, false, "TransformerLayer"));
    s.modules.push_back(module(l + ".attention", l, {l + ".attention.w"}, layer_time / 3.0, 1024.0, false, "Attention"));
    s.modules.push_back(module(l + ".mlp", l, {l + ".mlp.w"}, 2.0 * layer_time / 3.0, 1024.0, false, "MLP"));
    s.params.push_back({l + ".attention.w", attn_bytes});
    s.params.push_back({l + ".mlp.w", mlp_bytes});
  }
  return finish(std::move(s));
}

}  // namespace mpsim::testing
