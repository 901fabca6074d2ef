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

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpsim/model_graph.hpp"

namespace mpsim::tp {

/// Module kind -> distributed implementation.
using Registry = std::map<std::string, std::string>;

inline Registry default_registry() {
  return {{"Linear", "DistributedLinear"},
          {"Embedding", "DistributedEmbedding"},
          {"LayerNorm", "DistributedLayerNorm"},
          {"Attention", "DistributedAttentionLayer"},
          {"MLP", "DistributedTransformerOutputLayer"},
          {"TransformerLayer", "DistributedTransformerLayer"},
          {"Transformer", "DistributedTransformer"},
          {"TransformerLMHead", "DistributedTransformerLMHead"}};
}

struct Replacement {
  std::string module;
  std::string kind;
  std::string distributed_kind;
  bool operator==(const Replacement&) const = default;
};

/// Modules swapped for their distributed counterparts. Scanning top-down, a
/// module is replaced when its kind is registered, tensor parallelism is
/// enabled for it or an ancestor, no ancestor was replaced, and none of the
/// parameters in its subtree is used by a module outside that subtree.
inline std::vector<Replacement> plan_replacement(const ModelSpec& spec, const Registry& registry,
                                                 const std::set<std::string>& tp_marks) {
  const std::size_t n = spec.modules.size();
  std::vector<std::vector<std::size_t>> users(spec.params.size());
  for (std::size_t m = 0; m < n; ++m) {
    for (auto p : spec.param_indices(m)) users[p].push_back(m);
  }
  std::vector<Replacement> out;
  std::vector<bool> enabled(n, false), covered(n, false);
  for (auto m : spec.subtree(spec.root())) {
    const auto& d = spec.modules[m];
    const auto parent = spec.parent_of(m);
    enabled[m] = tp_marks.count(d.id) > 0 || (parent && enabled[*parent]);
    covered[m] = parent && covered[*parent];
    if (covered[m] || !enabled[m]) continue;
    auto it = registry.find(d.kind);
    if (d.kind.empty() || it == registry.end()) continue;
    const auto sub = spec.subtree(m);
    const std::set<std::size_t> inside(sub.begin(), sub.end());
    bool shares = false;
    for (auto s : sub) {
      for (auto p : spec.param_indices(s)) {
        for (auto u : users[p]) shares = shares || !inside.count(u);
      }
    }
    if (shares) continue;
    out.push_back({d.id, d.kind, it->second});
    covered[m] = true;
  }
  return out;
}

/// Per-module flag: the module lies inside a replaced subtree.
inline std::vector<bool> distributed_modules(const ModelSpec& spec, const std::vector<Replacement>& plan) {
  std::vector<bool> out(spec.modules.size(), false);
  for (const auto& r : plan) {
    for (auto s : spec.subtree(spec.index_of(r.module))) out[s] = true;
  }
  return out;
}

}  // namespace mpsim::tp
