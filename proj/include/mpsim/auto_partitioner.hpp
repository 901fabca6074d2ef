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
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/error.hpp"
#include "mpsim/model_graph.hpp"

namespace mpsim {

/// Sorted set of virtual partition indices.
using DeviceSet = std::vector<int>;

struct Segmentation {
  /// [begin, end) index ranges into the cost sequence, in order.
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  /// Largest segment cost sum.
  double objective = 0.0;
};

/// Splits `costs` into min(l, |costs|) consecutive non-empty segments so that
/// the largest segment sum is minimal. Segment sums are accumulated left to
/// right; among equally good splits the earliest split point wins.
inline Segmentation segment_children(std::span<const double> costs, std::size_t l) {
  if (costs.empty()) throw ContractViolation("segment_children: empty cost list");
  if (l == 0) throw ContractViolation("segment_children: segment count must be >= 1");
  for (double c : costs) {
    if (!(c > 0.0)) throw ContractViolation("segment_children: costs must be strictly positive");
  }
  const std::size_t n = costs.size();
  const std::size_t segs = std::min(l, n);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // best[k][i]: optimal objective for the first i elements in k segments.
  // split[k][i]: start index of the k-th (last) segment in that optimum.
  std::vector<std::vector<double>> best(segs + 1, std::vector<double>(n + 1, kInf));
  std::vector<std::vector<std::size_t>> split(segs + 1, std::vector<std::size_t>(n + 1, 0));
  {
    double s = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      s += costs[i - 1];
      best[1][i] = s;
    }
  }
  for (std::size_t k = 2; k <= segs; ++k) {
    for (std::size_t j = k - 1; j < n; ++j) {
      const double head = best[k - 1][j];
      if (head == kInf) continue;
      double s = 0.0;
      for (std::size_t i = j + 1; i <= n; ++i) {
        s += costs[i - 1];
        const double cand = std::max(head, s);
        if (cand < best[k][i]) {
          best[k][i] = cand;
          split[k][i] = j;
        }
      }
    }
  }

  Segmentation out;
  out.objective = best[segs][n];
  out.segments.resize(segs);
  std::size_t end = n;
  for (std::size_t k = segs; k >= 1; --k) {
    const std::size_t begin = k == 1 ? 0 : split[k][end];
    out.segments[k - 1] = {begin, end};
    end = begin;
  }
  return out;
}

/// D'Hondt-style allocation of `devices` over segments, executed exactly as
/// the partitioner's pseudo-code states: the winning quotient is divided by
/// a single global counter (s + 1) that grows with every device handed out.
/// Devices are handed out in ascending order; ties go to the lowest segment.
inline std::vector<DeviceSet> dhondt_allocate(const DeviceSet& devices, std::span<const double> seg_costs) {
  if (devices.empty()) throw ContractViolation("dhondt_allocate: empty device set");
  if (seg_costs.empty()) throw ContractViolation("dhondt_allocate: no segments");
  for (double c : seg_costs) {
    if (!(c > 0.0)) throw ContractViolation("dhondt_allocate: segment costs must be strictly positive");
  }
  std::vector<double> quotient(seg_costs.begin(), seg_costs.end());
  std::vector<DeviceSet> out(seg_costs.size());
  double s = 1.0;
  for (int device : devices) {
    const auto k = static_cast<std::size_t>(std::max_element(quotient.begin(), quotient.end()) - quotient.begin());
    out[k].push_back(device);
    quotient[k] = quotient[k] / (s + 1.0);
    s += 1.0;
  }
  return out;
}

struct ChildCost {
  std::size_t node = 0;
  double cost = 0.0;
};

/// Distributes `devices` over `children` (given in execution order).
/// Returns one device set per child, aligned with the input.
inline std::vector<DeviceSet> partition_children(const DeviceSet& devices, std::span<const ChildCost> children) {
  std::vector<DeviceSet> result(children.size());
  if (children.empty()) return result;
  if (devices.empty()) throw ContractViolation("partition_children: empty device set");

  std::vector<double> costs(children.size());
  std::transform(children.begin(), children.end(), costs.begin(), [](const ChildCost& c) { return c.cost; });
  const auto seg = segment_children(costs, devices.size());

  std::vector<double> seg_costs;
  seg_costs.reserve(seg.segments.size());
  for (auto [b, e] : seg.segments) {
    double s = 0.0;
    for (auto i = b; i < e; ++i) s += costs[i];
    seg_costs.push_back(s);
  }
  const auto alloc = dhondt_allocate(devices, seg_costs);

  for (std::size_t i = 0; i < seg.segments.size(); ++i) {
    const auto [b, e] = seg.segments[i];
    const auto& share = alloc[i];
    if (share.empty()) {
      for (auto j = b; j < e; ++j) result[j] = DeviceSet{devices.front()};
    } else if (e - b == 1 || share.size() == 1) {
      for (auto j = b; j < e; ++j) result[j] = share;
    } else {
      auto sub = partition_children(share, children.subspan(b, e - b));
      for (auto j = b; j < e; ++j) result[j] = std::move(sub[j - b]);
    }
  }
  return result;
}

struct Assignment {
  int num_partitions = 1;
  std::vector<int> partition;        // d(n), indexed by node
  std::vector<DeviceSet> devices;    // P(n), indexed by node
};

/// Breadth-first tree partitioning over `num_partitions` virtual devices.
inline Assignment partition_tree(const CostedTree& ct, int num_partitions) {
  if (num_partitions < 1) throw InfeasibleConfig("pipeline degree must be >= 1");
  const auto& tree = ct.tree;
  Assignment a;
  a.num_partitions = num_partitions;
  a.partition.assign(tree.size(), 0);
  a.devices.assign(tree.size(), {});
  a.devices[tree.root].resize(static_cast<std::size_t>(num_partitions));
  std::iota(a.devices[tree.root].begin(), a.devices[tree.root].end(), 0);

  for (auto v : tree.bfs_order()) {
    const auto& pv = a.devices[v];
    a.partition[v] = pv.front();
    const auto& kids = tree.nodes[v].children;
    if (kids.empty()) continue;
    if (pv.size() > 1) {
      std::vector<ChildCost> cc;
      cc.reserve(kids.size());
      for (auto c : kids) cc.push_back({c, ct.cost[c]});
      auto sets = partition_children(pv, cc);
      for (std::size_t i = 0; i < kids.size(); ++i) a.devices[kids[i]] = std::move(sets[i]);
    } else {
      for (auto c : kids) a.devices[c] = DeviceSet{pv.front()};
    }
  }
  return a;
}

/// Per-partition sum of local node costs.
inline std::vector<double> partition_report(const Assignment& a, const CostedTree& ct) {
  if (a.partition.size() != ct.tree.size()) throw ContractViolation("assignment does not cover the tree");
  std::vector<double> loads(static_cast<std::size_t>(a.num_partitions), 0.0);
  for (std::size_t v = 0; v < ct.tree.size(); ++v) {
    loads[static_cast<std::size_t>(a.partition[v])] += ct.local_cost(v);
  }
  return loads;
}

/// {"partitions": {node_id: int}, "loads": [...]}
inline nlohmann::json to_json(const Assignment& a, const CostedTree& ct) {
  nlohmann::json parts = nlohmann::json::object();
  for (std::size_t v = 0; v < ct.tree.size(); ++v) parts[ct.tree.nodes[v].id] = a.partition[v];
  return {{"partitions", parts}, {"loads", partition_report(a, ct)}};
}

/// Partition index owning each module (through its ModuleNode).
inline std::vector<int> module_partitions(const Assignment& a, const NodeTree& tree) {
  std::vector<int> out(tree.node_of_module.size());
  for (std::size_t m = 0; m < out.size(); ++m) out[m] = a.partition[tree.node_of_module[m]];
  return out;
}

}  // namespace mpsim
