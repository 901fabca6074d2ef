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


#include <gtest/gtest.h>

#include <random>

#include "mpsim/comm_model.hpp"

namespace mpsim {
namespace {

TensorDesc tensor(std::uint64_t bytes, Device d = Device::GPU) { return TensorDesc{{static_cast<std::int64_t>(bytes)}, bytes, d}; }

TEST(Stubs, NoTensors) {
  const Payload p(Payload::List{Payload(1.0), Payload(std::string("x"))});
  const auto s = extract_stubs(p);
  EXPECT_TRUE(s.stubs.empty());
  EXPECT_EQ(s.skeleton, p);
}

TEST(Stubs, TwoTensorsDistinctIds) {
  const Payload p(Payload::List{Payload(tensor(4)), Payload(tensor(8))});
  const auto s = extract_stubs(p);
  ASSERT_EQ(s.stubs.size(), 2u);
  EXPECT_NE(s.stubs[0].id, s.stubs[1].id);
}

TEST(Stubs, NestedRoundTrip) {
  const Payload inner(Payload::Dict{{"c", Payload(tensor(16))}});
  const Payload p(Payload::Dict{{"a", Payload(Payload::List{Payload(tensor(4))})},
                                {"x", Payload(Payload::Dict{{"b", inner}})}});
  const auto s = extract_stubs(p);
  EXPECT_EQ(s.stubs.size(), 2u);
  EXPECT_NE(s.skeleton, p);
  EXPECT_EQ(restore_stubs(s.skeleton, s.stubs), p);
}

Payload random_payload(std::mt19937_64& rng, int depth, int& tensors) {
  const int pick = std::uniform_int_distribution<int>(0, depth > 3 ? 2 : 4)(rng);
  switch (pick) {
    case 0: return Payload(static_cast<double>(rng() % 100));
    case 1: return Payload(std::string(1 + rng() % 4, 'k'));
    case 2:
      ++tensors;
      return Payload(tensor(rng() % 1000, rng() % 2 ? Device::GPU : Device::CPU));
    case 3: {
      Payload::List l;
      for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i) l.push_back(random_payload(rng, depth + 1, tensors));
      return Payload(std::move(l));
    }
    default: {
      Payload::Dict d;
      for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i) {
        d.emplace_back("k" + std::to_string(i), random_payload(rng, depth + 1, tensors));
      }
      return Payload(std::move(d));
    }
  }
}

TEST(Stubs, RandomRoundTrip) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 500; ++i) {
    int tensors = 0;
    const auto p = random_payload(rng, 0, tensors);
    const auto s = extract_stubs(p);
    EXPECT_EQ(s.stubs.size(), static_cast<std::size_t>(tensors));
    std::set<std::uint64_t> ids;
    for (const auto& st : s.stubs) ids.insert(st.id);
    EXPECT_EQ(ids.size(), s.stubs.size());
    EXPECT_EQ(restore_stubs(s.skeleton, s.stubs), p);
  }
}

TEST(Routing, ExhaustiveTable) {
  int cases = 0;
  for (auto device : {Device::CPU, Device::GPU}) {
    for (bool same_node : {false, true}) {
      for (bool nvlink : {false, true}) {
        for (bool rdma : {false, true}) {
          for (bool buffers : {false, true}) {
            ++cases;
            const bool mpi = device == Device::CPU || (same_node && !nvlink) || (!same_node && !rdma) || !buffers;
            EXPECT_EQ(routing_rule(device, same_node, nvlink, rdma, buffers),
                      mpi ? Communicator::MPI : Communicator::D2D);

            // the same case through route() on a concrete cluster
            ClusterShape c;
            c.ranks_per_node = 2;
            c.nvlink = nvlink;
            c.rdma = rdma;
            c.d2d_buffer_bytes = 100;
            D2DBuffers buf(4, c.d2d_buffer_bytes);
            const int dst = same_node ? 1 : 2;
            if (!buffers) {
              ASSERT_TRUE(buf.reserve(dst, BufferSide::Recv, 100));
              ASSERT_TRUE(buf.reserve(0, BufferSide::Send, 100));
            }
            const TensorStub st{0, {10}, 40, device};
            const auto r = route(st, 0, dst, c, buf);
            EXPECT_EQ(r.comm, mpi ? Communicator::MPI : Communicator::D2D);
            if (r.comm == Communicator::D2D) {
              EXPECT_EQ(buf.reserved(dst, BufferSide::Recv), 40u);
              EXPECT_EQ(r.link, same_node ? LinkClass::NVLink : LinkClass::RDMA);
              release_route(r, 0, dst, buf);
              EXPECT_EQ(buf.reserved(dst, BufferSide::Recv), 0u);
              EXPECT_EQ(buf.reserved(0, BufferSide::Send), 0u);
            } else {
              EXPECT_EQ(r.link, same_node ? LinkClass::MpiIntra : LinkClass::MpiInter);
            }
          }
        }
      }
    }
  }
  EXPECT_EQ(cases, 32);
}

TEST(Routing, Examples) {
  ClusterShape c;
  D2DBuffers buf(16, c.d2d_buffer_bytes);
  EXPECT_EQ(route(TensorStub{0, {1}, 4, Device::CPU}, 0, 1, c, buf).comm, Communicator::MPI);
  EXPECT_EQ(route(TensorStub{0, {1}, 4, Device::GPU}, 0, 1, c, buf).comm, Communicator::D2D);
  c.rdma = false;
  EXPECT_EQ(route(TensorStub{0, {1}, 4, Device::GPU}, 0, 9, c, buf).comm, Communicator::MPI);
  EXPECT_THROW(route(TensorStub{0, {1}, 4, Device::GPU}, 3, 3, c, buf), ContractViolation);
}

TEST(Buffers, CapacityArithmetic) {
  D2DBuffers b(1, 100);
  EXPECT_TRUE(b.reserve(0, BufferSide::Recv, 60));
  EXPECT_FALSE(b.reserve(0, BufferSide::Recv, 50));
  EXPECT_EQ(b.reserved(0, BufferSide::Recv), 60u);
  b.release(0, BufferSide::Recv, 60);
  EXPECT_TRUE(b.reserve(0, BufferSide::Recv, 100));
  b.release(0, BufferSide::Recv, 100);
  EXPECT_TRUE(b.reserve(0, BufferSide::Recv, 0));
  EXPECT_EQ(b.reserved(0, BufferSide::Recv), 0u);
  EXPECT_THROW(b.release(0, BufferSide::Recv, 1), ContractViolation);
}

TEST(Buffers, RandomInterleavingStaysWithinCapacity) {
  std::mt19937_64 rng(4);
  ClusterShape c;
  c.ranks_per_node = 2;
  c.d2d_buffer_bytes = 1000;
  D2DBuffers buf(4, c.d2d_buffer_bytes);
  std::vector<std::tuple<Route, int, int>> live;
  for (int i = 0; i < 5000; ++i) {
    if (live.empty() || rng() % 2) {
      const int src = static_cast<int>(rng() % 4);
      const int dst = (src + 1 + static_cast<int>(rng() % 3)) % 4;
      const auto r = route(TensorStub{0, {1}, rng() % 400, Device::GPU}, src, dst, c, buf);
      live.emplace_back(r, src, dst);
    } else {
      const auto k = rng() % live.size();
      const auto [r, s, d] = live[k];
      release_route(r, s, d, buf);
      live.erase(live.begin() + static_cast<long>(k));
    }
    for (int r = 0; r < 4; ++r) {
      EXPECT_LE(buf.reserved(r, BufferSide::Send), 1000u);
      EXPECT_LE(buf.reserved(r, BufferSide::Recv), 1000u);
    }
  }
}

TEST(TransferTime, Examples) {
  ClusterShape c;
  c.link(LinkClass::NVLink) = {1e-6, 1e9};
  EXPECT_DOUBLE_EQ(transfer_time(c, 0.0, LinkClass::NVLink, true), 1e-6);
  c.link(LinkClass::RDMA) = {5e-6, 1e10};
  c.metadata_latency_s = 1e-5;
  EXPECT_NEAR(transfer_time(c, 1e6, LinkClass::RDMA, false), 1.15e-4, 1e-18);
  EXPECT_NEAR(transfer_time(c, 1e6, LinkClass::RDMA, true), 1.05e-4, 1e-18);
  EXPECT_THROW(transfer_time(c, -1.0, LinkClass::RDMA, true), ContractViolation);
  EXPECT_THROW(transfer_time(c, 1.0, static_cast<LinkClass>(9), true), ContractViolation);
}

TEST(TransferTime, MonotoneInBytes) {
  const ClusterShape c;
  for (auto link : {LinkClass::NVLink, LinkClass::RDMA, LinkClass::MpiIntra, LinkClass::MpiInter}) {
    double prev = -1.0;
    for (double bytes = 0.0; bytes < 1e9; bytes = bytes * 3.0 + 7.0) {
      const double t = transfer_time(c, bytes, link, false);
      EXPECT_GE(t, prev);
      prev = t;
    }
  }
}

TEST(ClusterShape, LoadAndValidate) {
  const auto c = load_cluster_shape(R"({"ranks_per_node": 4, "links": {"nvlink": {"latency_s": 1e-6, "bandwidth_Bps": 1e11}}})");
  EXPECT_EQ(c.ranks_per_node, 4);
  EXPECT_DOUBLE_EQ(c.link(LinkClass::NVLink).latency_s, 1e-6);
  EXPECT_EQ(load_cluster_shape(to_json(c).dump()).link(LinkClass::NVLink).bandwidth_Bps, 1e11);
  EXPECT_THROW(load_cluster_shape(R"({"links": {"warp": {}}})"), SpecError);
  EXPECT_THROW(load_cluster_shape(R"({"links": {"rdma": {"bandwidth_Bps": 0}}})"), SpecError);
  EXPECT_THROW(load_cluster_shape("[1,"), SpecError);
}

}  // namespace
}  // namespace mpsim
