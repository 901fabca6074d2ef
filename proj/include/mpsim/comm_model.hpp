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

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/error.hpp"

namespace mpsim {

enum class Device { CPU, GPU };
enum class Communicator { MPI, D2D };
enum class LinkClass { NVLink = 0, RDMA = 1, MpiIntra = 2, MpiInter = 3 };

inline const char* to_string(LinkClass c) {
  switch (c) {
    case LinkClass::NVLink: return "nvlink";
    case LinkClass::RDMA: return "rdma";
    case LinkClass::MpiIntra: return "pcie_mpi_intra";
    case LinkClass::MpiInter: return "mpi_inter";
  }
  return "?";
}

inline LinkClass link_class_from_string(const std::string& s) {
  if (s == "nvlink") return LinkClass::NVLink;
  if (s == "rdma") return LinkClass::RDMA;
  if (s == "pcie_mpi_intra" || s == "mpi_intra") return LinkClass::MpiIntra;
  if (s == "mpi_inter") return LinkClass::MpiInter;
  throw SpecError(SpecError::Kind::BadValue, s, "unknown link class '" + s + "'");
}

// ---------------------------------------------------------------------------
// Payloads and stubs

struct TensorDesc {
  std::vector<std::int64_t> shape;
  std::uint64_t bytes = 0;
  Device device = Device::GPU;
  bool operator==(const TensorDesc&) const = default;
};

struct TensorStub {
  std::uint64_t id = 0;
  std::vector<std::int64_t> shape;
  std::uint64_t bytes = 0;
  Device device = Device::GPU;
  bool operator==(const TensorStub&) const = default;
};

/// Arbitrary nested message body: scalars, strings, lists, string-keyed
/// dicts (insertion ordered), tensors, or stubs standing in for tensors.
struct Payload {
  using List = std::vector<Payload>;
  using Dict = std::vector<std::pair<std::string, Payload>>;
  std::variant<std::monostate, double, std::string, TensorDesc, TensorStub, List, Dict> value;

  Payload() = default;
  Payload(double d) : value(d) {}
  Payload(std::string s) : value(std::move(s)) {}
  Payload(TensorDesc t) : value(std::move(t)) {}
  Payload(TensorStub t) : value(std::move(t)) {}
  Payload(List l) : value(std::move(l)) {}
  Payload(Dict d) : value(std::move(d)) {}

  bool operator==(const Payload& o) const { return value == o.value; }
};

namespace detail {

inline Payload strip(const Payload& p, std::vector<TensorStub>& stubs) {
  return std::visit(
      [&](const auto& v) -> Payload {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TensorDesc>) {
          TensorStub s{static_cast<std::uint64_t>(stubs.size()), v.shape, v.bytes, v.device};
          stubs.push_back(s);
          return Payload(std::move(s));
        } else if constexpr (std::is_same_v<T, Payload::List>) {
          Payload::List out;
          out.reserve(v.size());
          for (const auto& e : v) out.push_back(strip(e, stubs));
          return Payload(std::move(out));
        } else if constexpr (std::is_same_v<T, Payload::Dict>) {
          Payload::Dict out;
          out.reserve(v.size());
          for (const auto& [k, e] : v) out.emplace_back(k, strip(e, stubs));
          return Payload(std::move(out));
        } else {
          Payload out;
          out.value = v;
          return out;
        }
      },
      p.value);
}

inline Payload fill(const Payload& p, const std::map<std::uint64_t, const TensorStub*>& by_id) {
  return std::visit(
      [&](const auto& v) -> Payload {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TensorStub>) {
          auto it = by_id.find(v.id);
          if (it == by_id.end()) throw ContractViolation("restore_stubs: no tensor for stub " + std::to_string(v.id));
          return Payload(TensorDesc{it->second->shape, it->second->bytes, it->second->device});
        } else if constexpr (std::is_same_v<T, Payload::List>) {
          Payload::List out;
          for (const auto& e : v) out.push_back(fill(e, by_id));
          return Payload(std::move(out));
        } else if constexpr (std::is_same_v<T, Payload::Dict>) {
          Payload::Dict out;
          for (const auto& [k, e] : v) out.emplace_back(k, fill(e, by_id));
          return Payload(std::move(out));
        } else {
          Payload out;
          out.value = v;
          return out;
        }
      },
      p.value);
}

}  // namespace detail

struct StrippedPayload {
  Payload skeleton;
  std::vector<TensorStub> stubs;  // ids 0..n-1 in traversal order
};

/// Replaces every tensor in `payload` with a TensorStub.
inline StrippedPayload extract_stubs(const Payload& payload) {
  StrippedPayload out;
  out.skeleton = detail::strip(payload, out.stubs);
  return out;
}

/// Inverse of extract_stubs: swaps each stub back for the tensor it names.
inline Payload restore_stubs(const Payload& skeleton, std::span<const TensorStub> tensors) {
  std::map<std::uint64_t, const TensorStub*> by_id;
  for (const auto& t : tensors) by_id[t.id] = &t;
  return detail::fill(skeleton, by_id);
}

// ---------------------------------------------------------------------------
// Cluster description

struct LinkParams {
  double latency_s = 0.0;
  double bandwidth_Bps = 1.0;
};

struct ClusterShape {
  int ranks_per_node = 8;
  bool nvlink = true;
  bool rdma = true;
  std::array<LinkParams, 4> links{{
      {5e-6, 200e9},  // nvlink
      {1e-5, 40e9},   // rdma
      {2e-5, 10e9},   // MPI within a node (host staging folded into bandwidth)
      {5e-5, 10e9},   // MPI across nodes
  }};
  std::uint64_t d2d_buffer_bytes = std::uint64_t{1} << 30;
  /// Cost of the shape/dtype/device round that precedes a non-static transfer.
  double metadata_latency_s = 2e-5;

  int node_of(int rank) const { return rank / ranks_per_node; }
  const LinkParams& link(LinkClass c) const { return links[static_cast<std::size_t>(c)]; }
  LinkParams& link(LinkClass c) { return links[static_cast<std::size_t>(c)]; }

  void validate() const {
    if (ranks_per_node < 1) throw SpecError(SpecError::Kind::BadValue, "ranks_per_node", "ranks_per_node must be >= 1");
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto& l = links[i];
      if (!(l.latency_s >= 0.0) || !(l.bandwidth_Bps > 0.0)) {
        throw SpecError(SpecError::Kind::BadValue, to_string(static_cast<LinkClass>(i)),
                        std::string("link '") + to_string(static_cast<LinkClass>(i)) +
                            "' needs latency >= 0 and bandwidth > 0");
      }
    }
    if (!(metadata_latency_s >= 0.0)) {
      throw SpecError(SpecError::Kind::BadValue, "metadata_latency_s", "metadata latency must be >= 0");
    }
  }
};

inline ClusterShape load_cluster_shape(const std::string& text) {
  using K = SpecError::Kind;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(K::Parse, "", std::string("cluster JSON parse error: ") + e.what());
  }
  ClusterShape c;
  try {
    c.ranks_per_node = j.value("ranks_per_node", c.ranks_per_node);
    c.nvlink = j.value("nvlink", c.nvlink);
    c.rdma = j.value("rdma", c.rdma);
    c.d2d_buffer_bytes = j.value("d2d_buffer_bytes", c.d2d_buffer_bytes);
    c.metadata_latency_s = j.value("metadata_latency_s", c.link(LinkClass::MpiIntra).latency_s);
    if (j.contains("links")) {
      for (const auto& [name, jl] : j.at("links").items()) {
        auto& l = c.link(link_class_from_string(name));
        l.latency_s = jl.value("latency_s", l.latency_s);
        l.bandwidth_Bps = jl.value("bandwidth_Bps", l.bandwidth_Bps);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(K::Parse, "", std::string("cluster JSON schema error: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ClusterShape& c) {
  nlohmann::json links = nlohmann::json::object();
  for (std::size_t i = 0; i < c.links.size(); ++i) {
    links[to_string(static_cast<LinkClass>(i))] = {{"latency_s", c.links[i].latency_s},
                                                   {"bandwidth_Bps", c.links[i].bandwidth_Bps}};
  }
  return {{"ranks_per_node", c.ranks_per_node}, {"nvlink", c.nvlink},
          {"rdma", c.rdma},                     {"links", links},
          {"d2d_buffer_bytes", c.d2d_buffer_bytes}, {"metadata_latency_s", c.metadata_latency_s}};
}

// ---------------------------------------------------------------------------
// Persistent D2D buffers

enum class BufferSide { Send, Recv };

class D2DBuffers {
 public:
  D2DBuffers() = default;
  D2DBuffers(int ranks, std::uint64_t capacity) : capacity_(static_cast<std::size_t>(ranks) * 2, capacity),
                                                  reserved_(static_cast<std::size_t>(ranks) * 2, 0) {}

  std::uint64_t capacity(int rank, BufferSide side) const { return capacity_.at(slot(rank, side)); }
  std::uint64_t reserved(int rank, BufferSide side) const { return reserved_.at(slot(rank, side)); }
  std::uint64_t free(int rank, BufferSide side) const { return capacity(rank, side) - reserved(rank, side); }

  /// Reserves `bytes` if they fit; returns false and leaves state untouched otherwise.
  bool reserve(int rank, BufferSide side, std::uint64_t bytes) {
    if (free(rank, side) < bytes) return false;
    reserved_[slot(rank, side)] += bytes;
    return true;
  }

  void release(int rank, BufferSide side, std::uint64_t bytes) {
    auto& r = reserved_.at(slot(rank, side));
    if (bytes > r) {
      throw ContractViolation("d2d release of " + std::to_string(bytes) + " bytes exceeds the " + std::to_string(r) +
                              " reserved on rank " + std::to_string(rank));
    }
    r -= bytes;
  }

 private:
  std::size_t slot(int rank, BufferSide side) const {
    return static_cast<std::size_t>(rank) * 2 + (side == BufferSide::Send ? 0 : 1);
  }
  std::vector<std::uint64_t> capacity_;
  std::vector<std::uint64_t> reserved_;
};

// ---------------------------------------------------------------------------
// Routing

/// The communicator the backend must use, given the static facts about a
/// transfer. MPI is the fallback whenever D2D cannot be used.
inline Communicator routing_rule(Device device, bool same_node, bool nvlink, bool rdma, bool buffers_available) {
  if (device == Device::CPU) return Communicator::MPI;
  if (same_node && !nvlink) return Communicator::MPI;
  if (!same_node && !rdma) return Communicator::MPI;
  if (!buffers_available) return Communicator::MPI;
  return Communicator::D2D;
}

struct Route {
  Communicator comm = Communicator::MPI;
  LinkClass link = LinkClass::MpiIntra;
  std::uint64_t bytes = 0;
  bool holds_send = false;  // src send buffer reserved
  bool holds_recv = false;  // dst receive buffer reserved
};

/// Picks MPI or D2D for one tensor transfer between global ranks. A D2D
/// choice reserves the receive buffer on `dst` (and, across nodes, the send
/// buffer on `src`) so both sides agree on the outcome; release the route
/// with release_route() once the data has landed.
inline Route route(const TensorStub& stub, int src, int dst, const ClusterShape& cluster, D2DBuffers& buffers) {
  if (src == dst) throw ContractViolation("route: source and destination rank are the same");
  const bool same_node = cluster.node_of(src) == cluster.node_of(dst);
  Route r;
  r.bytes = stub.bytes;
  const auto pre = routing_rule(stub.device, same_node, cluster.nvlink, cluster.rdma, true);
  if (pre == Communicator::D2D) {
    const bool need_send = !same_node;
    const bool fits = buffers.free(dst, BufferSide::Recv) >= stub.bytes &&
                      (!need_send || buffers.free(src, BufferSide::Send) >= stub.bytes);
    if (routing_rule(stub.device, same_node, cluster.nvlink, cluster.rdma, fits) == Communicator::D2D) {
      buffers.reserve(dst, BufferSide::Recv, stub.bytes);
      r.holds_recv = true;
      if (need_send) {
        buffers.reserve(src, BufferSide::Send, stub.bytes);
        r.holds_send = true;
      }
      r.comm = Communicator::D2D;
      r.link = same_node ? LinkClass::NVLink : LinkClass::RDMA;
      return r;
    }
  }
  r.comm = Communicator::MPI;
  r.link = same_node ? LinkClass::MpiIntra : LinkClass::MpiInter;
  return r;
}

inline void release_route(const Route& r, int src, int dst, D2DBuffers& buffers) {
  if (r.holds_recv) buffers.release(dst, BufferSide::Recv, r.bytes);
  if (r.holds_send) buffers.release(src, BufferSide::Send, r.bytes);
}

/// Seconds to move `bytes` over `link`: an optional metadata round, the link
/// latency and the serialization time.
inline double transfer_time(const ClusterShape& cluster, double bytes, LinkClass link, bool static_mode) {
  if (!(bytes >= 0.0)) throw ContractViolation("transfer_time: negative byte count");
  const auto idx = static_cast<std::size_t>(link);
  if (idx >= cluster.links.size()) throw ContractViolation("transfer_time: unknown link class");
  const auto& l = cluster.links[idx];
  const double meta = static_mode ? 0.0 : cluster.metadata_latency_s;
  return meta + l.latency_s + bytes / l.bandwidth_Bps;
}

}  // namespace mpsim
