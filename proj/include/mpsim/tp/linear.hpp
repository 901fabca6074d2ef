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

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mpsim/error.hpp"
#include "mpsim/tp/collectives.hpp"
#include "mpsim/tp/tensor.hpp"

namespace mpsim::tp {

// ---------------------------------------------------------------------------
// Linear

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

/// Single-rank reference: y = x W^T + b.
inline Tensor reference_linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(linear(x, w), b); }

inline LinearGrads reference_linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  return {linear_input_grad(dy, w), linear_weight_grad(dy, x), row_sum(dy)};
}

/// Weight split by input feature: shard j holds columns [j*in/T, (j+1)*in/T).
/// The bias lives on tp_rank 0 only.
struct DistLinearParams {
  std::vector<Tensor> weight;
  Tensor bias;

  std::size_t degree() const { return weight.size(); }

  static DistLinearParams shard(const Tensor& w, const Tensor& b, std::size_t T) {
    if (w.rank() != 2 || b.size() != w.dim(0)) throw ShapeError("linear params: bad weight/bias shapes");
    return {split(w, 1, T), b};
  }

  Tensor full_weight() const { return concat(std::span<const Tensor>(weight), 1); }
};

struct DistLinearGrads {
  RankTensors input;            // per rank, shaped like that rank's input
  std::vector<Tensor> weight;   // per shard
  Tensor bias;                  // held by tp_rank 0
};

/// Linear layer distributed over a TP_GROUP. Each rank keeps its own batch:
/// features are exchanged with an all-to-all, every rank multiplies its
/// weight shard with the gathered feature slices, and a reduce-scatter
/// returns each sample's summed output to the rank it came from.
class DistLinear {
 public:
  explicit DistLinear(DistLinearParams params) : params_(std::move(params)) {
    if (params_.weight.empty()) throw ShapeError("dist_linear: empty rank group");
  }

  const DistLinearParams& params() const { return params_; }

  RankTensors forward(const RankTensors& x) {
    const std::size_t T = params_.degree();
    if (x.size() != T) throw ShapeError("dist_linear: " + std::to_string(x.size()) + " inputs for " + std::to_string(T) + " ranks");
    const int feat = -1;
    for (const auto& xi : x) {
      if (xi.cols() % T != 0) {
        throw ShapeError("dist_linear: input features " + std::to_string(xi.cols()) + " not divisible by " + std::to_string(T));
      }
    }
    merged_ = scatter_and_merge(x, feat, 0);
    RankTensors partial;
    for (std::size_t j = 0; j < T; ++j) {
      Tensor y = linear(merged_[j], params_.weight[j]);
      if (j == 0) y = add_bias(std::move(y), params_.bias);
      partial.push_back(std::move(y));
    }
    input_shapes_.clear();
    for (const auto& xi : x) input_shapes_.push_back(xi.shape());
    return reduce_scatter(partial, 0);
  }

  DistLinearGrads backward(const RankTensors& dy) {
    if (merged_.empty()) throw ContractViolation("dist_linear backward called before forward");
    const std::size_t T = params_.degree();
    if (dy.size() != T) throw ShapeError("dist_linear backward: wrong number of gradients");
    const RankTensors dpartial = reduce_scatter_backward(dy, 0);
    DistLinearGrads g;
    RankTensors dmerged;
    for (std::size_t j = 0; j < T; ++j) {
      g.weight.push_back(linear_weight_grad(dpartial[j], merged_[j]));
      dmerged.push_back(linear_input_grad(dpartial[j], params_.weight[j]));
    }
    g.bias = row_sum(dpartial[0]);
    g.input = scatter_and_merge_backward(dmerged, -1, 0);
    for (std::size_t i = 0; i < T; ++i) g.input[i] = g.input[i].reshaped(input_shapes_[i]);
    return g;
  }

 private:
  DistLinearParams params_;
  RankTensors merged_;
  std::vector<Shape> input_shapes_;
};

inline RankTensors dist_linear_forward(const DistLinearParams& params, const RankTensors& x) {
  DistLinear layer(params);
  return layer.forward(x);
}

// ---------------------------------------------------------------------------
// Embedding

/// Token ids with an explicit shape (e.g. [batch, seq]).
struct Indices {
  Shape shape;
  std::vector<long> ids;
};

inline Tensor reference_embedding(const Indices& idx, const Tensor& table) {
  const std::size_t vocab = table.dim(0), dim = table.dim(1);
  Shape s = idx.shape;
  s.push_back(dim);
  Tensor out(s);
  for (std::size_t p = 0; p < idx.ids.size(); ++p) {
    const long id = idx.ids[p];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("embedding index " + std::to_string(id) + " at position " + std::to_string(p) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    for (std::size_t c = 0; c < dim; ++c) out.at(p, c) = table.at(static_cast<std::size_t>(id), c);
  }
  return out;
}

/// Embedding table split along the embedding dimension. Indices are
/// all-gathered, each rank looks up its slice for every gathered index, and
/// an all-to-all (split batch, merge embedding) hands full-width rows back to
/// the rank that owns each sample. With a prescaled batch all ranks already
/// hold the same indices: each looks up its slice and the slices are
/// all-gathered along the embedding dimension.
inline RankTensors dist_embedding_forward(const std::vector<Indices>& idx, const std::vector<Tensor>& shards,
                                          bool prescaled_batch = false) {
  const std::size_t T = shards.size();
  if (idx.size() != T) throw ShapeError("dist_embedding: one index set per rank required");
  for (std::size_t r = 0; r < T; ++r) {
    if (idx[r].shape != idx.front().shape) throw ShapeError("dist_embedding: ranks hold different index shapes");
    const std::size_t vocab = shards.front().dim(0);
    for (std::size_t p = 0; p < idx[r].ids.size(); ++p) {
      const long id = idx[r].ids[p];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw ShapeError("embedding index " + std::to_string(id) + " at rank " + std::to_string(r) + " position " +
                         std::to_string(p) + " outside vocabulary of " + std::to_string(vocab));
      }
    }
  }
  if (prescaled_batch) {
    RankTensors local;
    for (std::size_t j = 0; j < T; ++j) local.push_back(reference_embedding(idx[j], shards[j]));
    return allgather(local, -1);
  }
  Indices gathered{idx.front().shape, {}};
  gathered.shape.front() *= T;
  for (const auto& i : idx) gathered.ids.insert(gathered.ids.end(), i.ids.begin(), i.ids.end());
  RankTensors looked_up;
  for (std::size_t j = 0; j < T; ++j) looked_up.push_back(reference_embedding(gathered, shards[j]));
  return scatter_and_merge(looked_up, 0, -1);
}

// ---------------------------------------------------------------------------
// Layer normalization

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

namespace detail {
inline Tensor apply_layernorm(const Tensor& x, const std::vector<double>& mean, const std::vector<double>& inv_std,
                              const Tensor& gamma, const Tensor& beta) {
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) y.at(r, c) = (x.at(r, c) - mean[r]) * inv_std[r] * gamma[c] + beta[c];
  }
  return y;
}
}  // namespace detail

/// Layer norm over the last dimension from the first two moments.
inline Tensor reference_layernorm(const Tensor& x, const LayerNormParams& p, double eps) {
  const double C = static_cast<double>(x.cols());
  if (x.cols() == 0) throw ShapeError("layernorm over zero channels");
  std::vector<double> mean(x.rows()), inv(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      s1 += x.at(r, c);
      s2 += x.at(r, c) * x.at(r, c);
    }
    mean[r] = s1 / C;
    inv[r] = 1.0 / std::sqrt(std::max(0.0, s2 / C - mean[r] * mean[r]) + eps);
  }
  return detail::apply_layernorm(x, mean, inv, p.gamma, p.beta);
}

/// Layer norm on channel shards: per-row Σx and Σx² are all-reduced as
/// scalars, then each rank normalizes its own slice.
inline RankTensors dist_layernorm_forward(const RankTensors& shards, const LayerNormParams& p, double eps) {
  if (shards.empty()) throw ShapeError("dist_layernorm: empty rank group");
  std::size_t C = 0;
  for (const auto& s : shards) C += s.cols();
  if (C == 0) throw ShapeError("layernorm over zero channels");
  if (p.gamma.size() != C || p.beta.size() != C) throw ShapeError("layernorm params do not match channel count");
  const std::size_t rows = shards.front().rows();
  RankTensors moments;
  for (const auto& s : shards) {
    if (s.rows() != rows) throw ShapeError("dist_layernorm: shards have different row counts");
    Tensor m({rows, 2});
    for (std::size_t r = 0; r < rows; ++r) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) {
        s1 += s.at(r, c);
        s2 += s.at(r, c) * s.at(r, c);
      }
      m.at(r, 0) = s1;
      m.at(r, 1) = s2;
    }
    moments.push_back(std::move(m));
  }
  const Tensor total = fwd_allreduce(moments).front();
  std::vector<double> mean(rows), inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    mean[r] = total.at(r, 0) / static_cast<double>(C);
    inv[r] = 1.0 / std::sqrt(std::max(0.0, total.at(r, 1) / static_cast<double>(C) - mean[r] * mean[r]) + eps);
  }
  RankTensors out;
  std::size_t offset = 0;
  for (const auto& s : shards) {
    const Tensor g = slice(p.gamma, 0, offset, offset + s.cols());
    const Tensor b = slice(p.beta, 0, offset, offset + s.cols());
    out.push_back(detail::apply_layernorm(s, mean, inv, g, b));
    offset += s.cols();
  }
  return out;
}

}  // namespace mpsim::tp
