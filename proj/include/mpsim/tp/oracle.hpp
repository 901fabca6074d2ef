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

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/tp/collectives.hpp"
#include "mpsim/tp/linear.hpp"
#include "mpsim/tp/tensor.hpp"
#include "mpsim/tp/transformer.hpp"

namespace mpsim::tp {

struct OracleResult {
  std::string op;
  std::size_t T = 1;
  std::string shape;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

struct OracleOptions {
  std::vector<std::size_t> degrees{1, 2, 4};
  int cases = 50;
  std::uint64_t seed = 7;
  /// Negative control: deliberately feeds dist_linear a wrong weight shard.
  bool inject_fault = false;
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double worst(const RankTensors& got, const std::vector<Tensor>& want) {
  double e = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) e = std::max(e, max_rel_err(got[i], want[i]));
  return e;
}

inline TransformerLayerConfig random_config(std::mt19937_64& rng, std::size_t T) {
  TransformerLayerConfig c;
  c.num_attention_heads = T * pick(rng, 1, 2);
  c.attention_head_size = pick(rng, 1, 4);
  c.hidden_size = c.num_attention_heads * c.attention_head_size;
  c.intermediate_size = T * pick(rng, 1, 4);
  c.activation = pick(rng, 0, 1) ? Activation::Gelu : Activation::Relu;
  c.layernorm_epsilon = 1e-5;
  if (pick(rng, 0, 1)) c.causal_mask_size = 8;
  c.pre_layernorm = pick(rng, 0, 1) == 1;
  c.post_layernorm = pick(rng, 0, 1) == 1;
  return c;
}

inline std::vector<AttentionMask> random_masks(std::mt19937_64& rng, std::size_t T, std::size_t B, std::size_t S) {
  std::vector<AttentionMask> masks;
  for (std::size_t r = 0; r < T; ++r) {
    AttentionMask m{{B, S}, {}};
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < S; ++s) m.keep.push_back(s == 0 ? 1 : static_cast<int>(pick(rng, 0, 3) != 0));
    }
    masks.push_back(std::move(m));
  }
  return masks;
}


}  // namespace detail

/// Runs every distributed module against its single-rank reference over
/// random shapes and reports the worst relative error per case.
inline std::vector<OracleResult> run_oracle_suite(const OracleOptions& opt) {
  std::vector<OracleResult> out;
  std::mt19937_64 rng(opt.seed);
  auto record = [&](const std::string& op, std::size_t T, const std::string& shape, double err, double tol) {
    out.push_back({op, T, shape, err, tol, err <= tol});
  };
  using detail::pick;

  for (std::size_t T : opt.degrees) {
    for (int c = 0; c < opt.cases; ++c) {
      // linear
      {
        const std::size_t B = pick(rng, 1, 4), in = T * pick(rng, 1, 4), o = pick(rng, 1, 6);
        const Tensor w = random_normal({o, in}, rng), b = random_normal({o}, rng);
        RankTensors x;
        for (std::size_t r = 0; r < T; ++r) x.push_back(random_normal({B, in}, rng));
        auto params = DistLinearParams::shard(w, b, T);
        if (opt.inject_fault) {
          if (T > 1) std::swap(params.weight.front(), params.weight.back());
          else for (auto& v : params.weight.front().data()) v *= 1.5;
        }
        const auto y = dist_linear_forward(params, x);
        std::vector<Tensor> ref;
        for (const auto& xi : x) ref.push_back(reference_linear(xi, w, b));
        record("dist_linear", T, shape_str({B, in, o}), detail::worst(y, ref), 1e-12);
      }
      // embedding, plain and prescaled
      {
        const std::size_t vocab = pick(rng, 2, 10), dim = T * pick(rng, 1, 4), B = pick(rng, 1, 3), S = pick(rng, 1, 3);
        const Tensor table = random_normal({vocab, dim}, rng);
        std::vector<Indices> idx;
        for (std::size_t r = 0; r < T; ++r) {
          Indices i{{B, S}, {}};
          for (std::size_t p = 0; p < B * S; ++p) i.ids.push_back(static_cast<long>(pick(rng, 0, vocab - 1)));
          idx.push_back(std::move(i));
        }
        const auto shards = split(table, 1, T);
        std::vector<Tensor> ref;
        for (const auto& i : idx) ref.push_back(reference_embedding(i, table));
        record("dist_embedding", T, shape_str({vocab, dim, B, S}),
               detail::worst(dist_embedding_forward(idx, shards), ref), 1e-12);
        const std::vector<Indices> same(T, idx.front());
        const std::vector<Tensor> ref_same(T, ref.front());
        record("dist_embedding_prescaled", T, shape_str({vocab, dim, B, S}),
               detail::worst(dist_embedding_forward(same, shards, true), ref_same), 1e-12);
      }
      // layernorm
      {
        const std::size_t rows = pick(rng, 1, 5), C = T * pick(rng, 1, 4);
        const Tensor x = random_normal({rows, C}, rng);
        const auto p = random_layernorm(C, rng);
        const auto y = concat(std::span<const Tensor>(dist_layernorm_forward(split(x, 1, T), p, 1e-5)), 1);
        record("dist_layernorm", T, shape_str({rows, C}), max_rel_err(y, reference_layernorm(x, p, 1e-5)), 1e-12);
      }
      // attention / mlp / layer in both modes
      {
        auto cfg = detail::random_config(rng, T);
        const std::size_t B = pick(rng, 1, 2), S = pick(rng, 1, 4);
        const auto params = random_layer_params(cfg, rng);
        RankTensors x;
        for (std::size_t r = 0; r < T; ++r) x.push_back(random_normal({B, S, cfg.hidden_size}, rng));
        const auto masks = detail::random_masks(rng, T, B, S);
        const std::string shape = shape_str({B, S, cfg.num_attention_heads, cfg.attention_head_size,
                                             cfg.intermediate_size});

        std::vector<Tensor> ref_attn, ref_mlp, ref_layer;
        for (std::size_t r = 0; r < T; ++r) {
          ref_attn.push_back(reference_attention(cfg, params.attention, x[r], masks[r]));
          ref_mlp.push_back(reference_mlp(cfg, params.mlp, x[r]));
          ref_layer.push_back(reference_transformer_layer(cfg, params, x[r], masks[r]));
        }
        RankTensors attn[2], mlp[2], layer[2];
        for (int m = 0; m < 2; ++m) {
          cfg.optimize = m == 0 ? Optimize::Speed : Optimize::Memory;
          const std::string mode = to_string(cfg.optimize);
          attn[m] = dist_attention_forward(cfg, params.attention, x, masks);
          mlp[m] = dist_mlp_forward(cfg, params.mlp, x);
          layer[m] = dist_transformer_layer_forward(cfg, params, x, masks);
          record("dist_attention_" + mode, T, shape, detail::worst(attn[m], ref_attn), 1e-10);
          record("dist_mlp_" + mode, T, shape, detail::worst(mlp[m], ref_mlp), 1e-10);
          record("dist_transformer_layer_" + mode, T, shape, detail::worst(layer[m], ref_layer), 1e-10);
          const RankTensors same(T, x.front());
          const std::vector<Tensor> ref_same(T, ref_layer.front());
          const std::vector<AttentionMask> same_masks(T, masks.front());
          record("dist_transformer_layer_prescaled_" + mode, T, shape,
                 detail::worst(dist_transformer_layer_forward(cfg, params, same, same_masks, true), ref_same), 1e-10);
        }
        record("speed_vs_memory_attention", T, shape, detail::worst(attn[1], attn[0]), 1e-10);
        record("speed_vs_memory_mlp", T, shape, detail::worst(mlp[1], mlp[0]), 1e-10);
        record("speed_vs_memory_layer", T, shape, detail::worst(layer[1], layer[0]), 1e-10);
      }
    }
  }
  return out;
}

inline bool all_pass(const std::vector<OracleResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

inline nlohmann::json to_json(const std::vector<OracleResult>& results) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& r : results) {
    cases.push_back({{"op", r.op}, {"T", r.T}, {"shape", r.shape}, {"max_rel_err", r.max_rel_err},
                     {"tolerance", r.tolerance}, {"pass", r.pass}});
  }
  return {{"pass", all_pass(results)}, {"cases", cases}};
}

}  // namespace mpsim::tp
