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
#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/error.hpp"

namespace mpsim {

struct RankCoord {
  int pp_rank = 0;
  int tp_rank = 0;
  int rdp_rank = 0;
  int dp_rank = 0;  // rdp_rank * tp_degree + tp_rank
};

enum class GroupKind { PP, TP, DP, RDP };

/// Rank grid for a given world size, parallelism degrees and placement.
///
/// The placement string names one letter per axis (D = reduced data
/// parallelism, P = pipeline, T = tensor). A global rank is the mixed-radix
/// number formed by the three axis indices with the rightmost letter varying
/// fastest, so the rightmost axis runs over neighbouring ranks.
class Topology {
 public:
  int world_size() const { return world_; }
  int pp_degree() const { return pp_; }
  int tp_degree() const { return tp_; }
  int dp_degree() const { return world_ / pp_; }
  int rdp_degree() const { return dp_degree() / tp_; }
  bool prescaled_batch() const { return prescaled_; }
  /// Number of distinct data streams: with a prescaled batch every TP_GROUP
  /// sees the same samples.
  int effective_dp_degree() const { return prescaled_ ? rdp_degree() : dp_degree(); }
  const std::string& placement() const { return placement_; }

  const RankCoord& coord(int rank) const { return coords_.at(static_cast<std::size_t>(rank)); }

  /// Global rank with the given axis indices.
  int rank_of(int pp_rank, int tp_rank, int rdp_rank) const {
    int r = 0;
    for (char c : placement_) {
      switch (c) {
        case 'D': r = r * rdp_degree() + rdp_rank; break;
        case 'P': r = r * pp_ + pp_rank; break;
        default: r = r * tp_ + tp_rank; break;
      }
    }
    return r;
  }

  /// Sorted member ranks of `rank`'s group of the given kind.
  const std::vector<int>& group(GroupKind kind, int rank) const {
    const auto& table = tables_[static_cast<std::size_t>(kind)];
    return table.groups[table.group_of[static_cast<std::size_t>(rank)]];
  }
  /// All groups of a kind, each sorted, ordered by smallest member.
  const std::vector<std::vector<int>>& groups(GroupKind kind) const {
    return tables_[static_cast<std::size_t>(kind)].groups;
  }

  friend Topology build_topology(int, int, int, const std::string&, bool);

 private:
  struct GroupTable {
    std::vector<std::vector<int>> groups;
    std::vector<std::size_t> group_of;
  };

  int world_ = 1, pp_ = 1, tp_ = 1;
  bool prescaled_ = false;
  std::string placement_ = "DPT";
  std::vector<RankCoord> coords_;
  std::array<GroupTable, 4> tables_;
};

/// Resolves the "spread"/"cluster" aliases; throws on anything that is not a
/// permutation of "DPT".
inline std::string normalize_placement(const std::string& placement) {
  if (placement == "spread") return "TPD";
  if (placement == "cluster") return "DPT";
  std::string sorted = placement;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != "DPT") {
    throw InfeasibleConfig("placement_strategy must be 'spread', 'cluster' or a permutation of 'DPT', got '" +
                           placement + "'");
  }
  return placement;
}

inline Topology build_topology(int world_size, int pp_degree, int tp_degree, const std::string& placement,
                               bool prescaled_batch = false) {
  if (world_size < 1 || pp_degree < 1 || tp_degree < 1) {
    throw InfeasibleConfig("world size and parallelism degrees must be >= 1");
  }
  if (world_size % (pp_degree * tp_degree) != 0) {
    throw InfeasibleConfig("world size " + std::to_string(world_size) + " is not divisible by pp_degree x tp_degree = " +
                           std::to_string(pp_degree * tp_degree));
  }
  Topology t;
  t.world_ = world_size;
  t.pp_ = pp_degree;
  t.tp_ = tp_degree;
  t.prescaled_ = prescaled_batch;
  t.placement_ = normalize_placement(placement);

  const int rdp = t.rdp_degree();
  auto radix = [&](char c) { return c == 'D' ? rdp : c == 'P' ? pp_degree : tp_degree; };
  t.coords_.resize(static_cast<std::size_t>(world_size));
  for (int r = 0; r < world_size; ++r) {
    int rest = r;
    RankCoord rc;
    for (int pos = 2; pos >= 0; --pos) {
      const char c = t.placement_[static_cast<std::size_t>(pos)];
      const int digit = rest % radix(c);
      rest /= radix(c);
      if (c == 'D') rc.rdp_rank = digit;
      else if (c == 'P') rc.pp_rank = digit;
      else rc.tp_rank = digit;
    }
    rc.dp_rank = rc.rdp_rank * tp_degree + rc.tp_rank;
    t.coords_[static_cast<std::size_t>(r)] = rc;
  }

  // Group key per kind: the coordinates that stay fixed inside a group.
  auto key = [&](GroupKind kind, const RankCoord& c) -> long {
    switch (kind) {
      case GroupKind::PP: return static_cast<long>(c.tp_rank) * rdp + c.rdp_rank;
      case GroupKind::TP: return static_cast<long>(c.pp_rank) * rdp + c.rdp_rank;
      case GroupKind::DP: return c.pp_rank;
      case GroupKind::RDP: return static_cast<long>(c.pp_rank) * tp_degree + c.tp_rank;
    }
    return 0;
  };
  for (auto kind : {GroupKind::PP, GroupKind::TP, GroupKind::DP, GroupKind::RDP}) {
    auto& table = t.tables_[static_cast<std::size_t>(kind)];
    std::vector<std::pair<long, std::size_t>> seen;  // key -> group index
    table.group_of.resize(static_cast<std::size_t>(world_size));
    for (int r = 0; r < world_size; ++r) {
      const long k = key(kind, t.coords_[static_cast<std::size_t>(r)]);
      auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == k; });
      std::size_t g;
      if (it == seen.end()) {
        g = table.groups.size();
        seen.emplace_back(k, g);
        table.groups.emplace_back();
      } else {
        g = it->second;
      }
      table.groups[g].push_back(r);
      table.group_of[static_cast<std::size_t>(r)] = g;
    }
  }
  return t;
}

inline nlohmann::json to_json(const Topology& t) {
  nlohmann::json ranks = nlohmann::json::array();
  for (int r = 0; r < t.world_size(); ++r) {
    const auto& c = t.coord(r);
    ranks.push_back({{"rank", r}, {"pp_rank", c.pp_rank}, {"tp_rank", c.tp_rank},
                     {"dp_rank", c.dp_rank}, {"rdp_rank", c.rdp_rank}});
  }
  return {{"world_size", t.world_size()},
          {"pp_degree", t.pp_degree()},
          {"tp_degree", t.tp_degree()},
          {"dp_degree", t.dp_degree()},
          {"rdp_degree", t.rdp_degree()},
          {"effective_dp_degree", t.effective_dp_degree()},
          {"placement", t.placement()},
          {"prescaled_batch", t.prescaled_batch()},
          {"ranks", ranks}};
}

}  // namespace mpsim
