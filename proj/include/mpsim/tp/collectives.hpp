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

#include <string>
#include <vector>

#include "mpsim/error.hpp"
#include "mpsim/tp/tensor.hpp"

namespace mpsim::tp {

/// One tensor per tp_rank, index = tp_rank.
using RankTensors = std::vector<Tensor>;

enum class CollectiveKind { AllGather, FwdAllReduce, BwdAllReduce, ScatterAndMerge, ReduceScatter };

namespace detail {
inline void check_group(const RankTensors& in, const char* op) {
  if (in.empty()) throw ShapeError(std::string(op) + ": empty rank group");
  for (const auto& t : in) {
    if (t.shape() != in.front().shape()) {
      throw ShapeError(std::string(op) + ": rank shapes differ (" + shape_str(t.shape()) + " vs " +
                       shape_str(in.front().shape()) + ")");
    }
  }
}

// Elementwise sum in ascending rank order.
inline Tensor ordered_sum(const RankTensors& in) {
  Tensor acc = in.front();
  for (std::size_t r = 1; r < in.size(); ++r) acc += in[r];
  return acc;
}
}  // namespace detail

/// Concatenation of every rank's tensor along `dim`, on every rank.
inline RankTensors allgather(const RankTensors& in, int dim) {
  if (in.empty()) throw ShapeError("allgather: empty rank group");
  Tensor all = concat(std::span<const Tensor>(in), dim);
  return RankTensors(in.size(), all);
}

/// Sum on every rank in the forward pass; identity in the backward pass.
inline RankTensors fwd_allreduce(const RankTensors& in) {
  detail::check_group(in, "fwd_allreduce");
  return RankTensors(in.size(), detail::ordered_sum(in));
}
inline RankTensors fwd_allreduce_backward(const RankTensors& grad) { return grad; }

/// Identity in the forward pass; sum of gradients in the backward pass.
inline RankTensors bwd_allreduce(const RankTensors& in) { return in; }
inline RankTensors bwd_allreduce_backward(const RankTensors& grad) { return fwd_allreduce(grad); }

/// Rank i splits its tensor along `split_dim` into T blocks and sends block j
/// to rank j; rank j concatenates what it received along `merge_dim` in rank
/// order.
inline RankTensors scatter_and_merge(const RankTensors& in, int split_dim, int merge_dim) {
  detail::check_group(in, "scatter_and_merge");
  const std::size_t T = in.size();
  std::vector<RankTensors> pieces;
  for (const auto& t : in) pieces.push_back(split(t, split_dim, T));
  RankTensors out;
  for (std::size_t j = 0; j < T; ++j) {
    RankTensors received;
    for (std::size_t i = 0; i < T; ++i) received.push_back(pieces[i][j]);
    out.push_back(concat(std::span<const Tensor>(received), merge_dim));
  }
  return out;
}
inline RankTensors scatter_and_merge_backward(const RankTensors& grad, int split_dim, int merge_dim) {
  return scatter_and_merge(grad, merge_dim, split_dim);
}

/// Rank i receives the sum over ranks of block i along `dim`.
inline RankTensors reduce_scatter(const RankTensors& in, int dim) {
  detail::check_group(in, "reduce_scatter");
  return split(detail::ordered_sum(in), dim, in.size());
}
inline RankTensors reduce_scatter_backward(const RankTensors& grad, int dim) { return allgather(grad, dim); }

/// Gradient of allgather: each rank's block is the sum of all ranks' gradients for it.
inline RankTensors allgather_backward(const RankTensors& grad, int dim) { return reduce_scatter(grad, dim); }

/// Uniform entry point mirroring the collective kinds.
inline RankTensors tp_collective(CollectiveKind kind, const RankTensors& in, int dim_a, int dim_b = 0) {
  switch (kind) {
    case CollectiveKind::AllGather: return allgather(in, dim_a);
    case CollectiveKind::FwdAllReduce: return fwd_allreduce(in);
    case CollectiveKind::BwdAllReduce: return bwd_allreduce(in);
    case CollectiveKind::ScatterAndMerge: return scatter_and_merge(in, dim_a, dim_b);
    case CollectiveKind::ReduceScatter: return reduce_scatter(in, dim_a);
  }
  throw ContractViolation("unknown collective");
}

}  // namespace mpsim::tp
