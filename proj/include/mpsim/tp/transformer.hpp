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
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mpsim/error.hpp"
#include "mpsim/tp/collectives.hpp"
#include "mpsim/tp/linear.hpp"
#include "mpsim/tp/tensor.hpp"

namespace mpsim::tp {

enum class Optimize { Speed, Memory };
enum class Activation { Gelu, Relu };

inline Optimize optimize_from_string(const std::string& s) {
  if (s == "speed") return Optimize::Speed;
  if (s == "memory") return Optimize::Memory;
  throw SpecError(SpecError::Kind::BadValue, s, "optimize must be 'speed' or 'memory', got '" + s + "'");
}
inline const char* to_string(Optimize o) { return o == Optimize::Speed ? "speed" : "memory"; }

struct TransformerLayerConfig {
  std::size_t num_attention_heads = 1;
  std::size_t attention_head_size = 1;
  std::size_t hidden_size = 1;
  std::size_t intermediate_size = 1;
  Activation activation = Activation::Gelu;
  double layernorm_epsilon = 1e-5;
  std::optional<std::size_t> causal_mask_size;
  bool add_cross_attention = false;
  bool pre_layernorm = false;
  bool post_layernorm = true;
  Optimize optimize = Optimize::Memory;

  void validate(std::size_t T) const {
    if (T == 0) throw ShapeError("tensor parallel degree must be >= 1");
    if (num_attention_heads * attention_head_size != hidden_size) {
      throw ShapeError("hidden_size " + std::to_string(hidden_size) + " != heads x head_size = " +
                       std::to_string(num_attention_heads * attention_head_size));
    }
    if (num_attention_heads % T != 0) {
      throw ShapeError("num_attention_heads " + std::to_string(num_attention_heads) + " not divisible by " +
                       std::to_string(T));
    }
    if (optimize == Optimize::Memory && (hidden_size % T != 0 || intermediate_size % T != 0)) {
      throw ShapeError("memory mode needs hidden and intermediate sizes divisible by " + std::to_string(T));
    }
    if (intermediate_size % T != 0) {
      throw ShapeError("intermediate_size " + std::to_string(intermediate_size) + " not divisible by " +
                       std::to_string(T));
    }
    if (add_cross_attention) {
      throw ContractViolation("add_cross_attention is accepted in configs but cross-attention is not modeled");
    }
  }
};

/// Per-sample key mask (1 keeps a key position, 0 drops it), shape [batch, seq].
struct AttentionMask {
  Shape shape;
  std::vector<int> keep;
  bool empty() const { return keep.empty(); }
};

inline AttentionMask concat_masks(const std::vector<AttentionMask>& masks) {
  if (masks.empty() || masks.front().empty()) return {};
  AttentionMask out{masks.front().shape, {}};
  out.shape.front() *= masks.size();
  for (const auto& m : masks) {
    if (m.shape != masks.front().shape) throw ShapeError("attention masks differ in shape across ranks");
    out.keep.insert(out.keep.end(), m.keep.begin(), m.keep.end());
  }
  return out;
}

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;
};

struct TransformerLayerParams {
  AttentionParams attention;
  MlpParams mlp;
  LayerNormParams attention_pre_ln, attention_post_ln, mlp_pre_ln, mlp_post_ln;
};

inline LayerNormParams random_layernorm(std::size_t C, std::mt19937_64& rng) {
  LayerNormParams p{random_normal({C}, rng, 0.1), random_normal({C}, rng, 0.1)};
  for (auto& g : p.gamma.data()) g += 1.0;
  return p;
}

inline TransformerLayerParams random_layer_params(const TransformerLayerConfig& cfg, std::mt19937_64& rng) {
  const std::size_t h = cfg.hidden_size, I = cfg.intermediate_size;
  const double sh = 1.0 / std::sqrt(static_cast<double>(h)), si = 1.0 / std::sqrt(static_cast<double>(I));
  TransformerLayerParams p;
  auto& a = p.attention;
  a.wq = random_normal({h, h}, rng, sh);
  a.bq = random_normal({h}, rng, 0.1);
  a.wk = random_normal({h, h}, rng, sh);
  a.bk = random_normal({h}, rng, 0.1);
  a.wv = random_normal({h, h}, rng, sh);
  a.bv = random_normal({h}, rng, 0.1);
  a.wo = random_normal({h, h}, rng, sh);
  a.bo = random_normal({h}, rng, 0.1);
  p.mlp.w1 = random_normal({I, h}, rng, sh);
  p.mlp.b1 = random_normal({I}, rng, 0.1);
  p.mlp.w2 = random_normal({h, I}, rng, si);
  p.mlp.b2 = random_normal({h}, rng, 0.1);
  p.attention_pre_ln = random_layernorm(h, rng);
  p.attention_post_ln = random_layernorm(h, rng);
  p.mlp_pre_ln = random_layernorm(h, rng);
  p.mlp_post_ln = random_layernorm(h, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Shared math

inline double activate(Activation a, double x) {
  if (a == Activation::Relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline Tensor activate(Activation a, Tensor t) {
  for (auto& v : t.data()) v = activate(a, v);
  return t;
}

/// Scaled dot-product attention for `heads` heads laid out head-major in the
/// last dimension of q, k, v ([batch, seq, heads * head_size]).
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                             std::size_t head_size, const AttentionMask& mask,
                             std::optional<std::size_t> causal_mask_size) {
  if (q.rank() != 3) throw ShapeError("attention expects [batch, seq, channels] activations");
  const std::size_t B = q.dim(0), S = q.dim(1), C = q.dim(2);
  if (C != heads * head_size) throw ShapeError("attention: channel count does not match heads");
  if (!mask.empty() && (mask.shape != Shape{B, S})) {
    throw ShapeError("attention mask " + shape_str(mask.shape) + " does not match [" + std::to_string(B) + "," +
                     std::to_string(S) + "]");
  }
  if (causal_mask_size && S > *causal_mask_size) {
    throw ShapeError("sequence length " + std::to_string(S) + " exceeds causal_mask_size " +
                     std::to_string(*causal_mask_size));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_size));
  Tensor ctx(q.shape());
  std::vector<double> score(S);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * head_size;
      for (std::size_t s = 0; s < S; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < S; ++t) {
          const bool masked = (causal_mask_size && t > s) || (!mask.empty() && mask.keep[b * S + t] == 0);
          if (masked) {
            score[t] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double acc = 0.0;
          for (std::size_t d = 0; d < head_size; ++d) {
            acc += q[(b * S + s) * C + off + d] * k[(b * S + t) * C + off + d];
          }
          score[t] = acc * scale;
          mx = std::max(mx, score[t]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
          throw ShapeError("attention row with every key masked (batch " + std::to_string(b) + ", position " +
                           std::to_string(s) + ")");
        }
        double z = 0.0;
        for (std::size_t t = 0; t < S; ++t) {
          score[t] = std::exp(score[t] - mx);
          z += score[t];
        }
        for (std::size_t d = 0; d < head_size; ++d) {
          double acc = 0.0;
          for (std::size_t t = 0; t < S; ++t) acc += score[t] * v[(b * S + t) * C + off + d];
          ctx[(b * S + s) * C + off + d] = acc / z;
        }
      }
    }
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Single-rank references

inline Tensor reference_attention(const TransformerLayerConfig& cfg, const AttentionParams& p, const Tensor& x,
                                  const AttentionMask& mask = {}) {
  const Tensor q = add_bias(linear(x, p.wq), p.bq);
  const Tensor k = add_bias(linear(x, p.wk), p.bk);
  const Tensor v = add_bias(linear(x, p.wv), p.bv);
  const Tensor ctx = attention_core(q, k, v, cfg.num_attention_heads, cfg.attention_head_size, mask,
                                    cfg.causal_mask_size);
  return add_bias(linear(ctx, p.wo), p.bo);
}

inline Tensor reference_mlp(const TransformerLayerConfig& cfg, const MlpParams& p, const Tensor& x) {
  const Tensor h = activate(cfg.activation, add_bias(linear(x, p.w1), p.b1));
  return add_bias(linear(h, p.w2), p.b2);
}

/// attention block then MLP block; each block is
/// y = x + f(pre ? LN(x) : x), followed by LN(y) when post is set.
inline Tensor reference_transformer_layer(const TransformerLayerConfig& cfg, const TransformerLayerParams& p,
                                          const Tensor& x, const AttentionMask& mask = {}) {
  const double eps = cfg.layernorm_epsilon;
  Tensor in = cfg.pre_layernorm ? reference_layernorm(x, p.attention_pre_ln, eps) : x;
  Tensor h = x + reference_attention(cfg, p.attention, in, mask);
  if (cfg.post_layernorm) h = reference_layernorm(h, p.attention_post_ln, eps);
  in = cfg.pre_layernorm ? reference_layernorm(h, p.mlp_pre_ln, eps) : h;
  Tensor y = h + reference_mlp(cfg, p.mlp, in);
  if (cfg.post_layernorm) y = reference_layernorm(y, p.mlp_post_ln, eps);
  return y;
}

inline Tensor reference_transformer(const TransformerLayerConfig& cfg, const std::vector<TransformerLayerParams>& layers,
                                    const Tensor& x, const AttentionMask& mask = {}) {
  Tensor h = x;
  for (const auto& p : layers) h = reference_transformer_layer(cfg, p, h, mask);
  return h;
}

// ---------------------------------------------------------------------------
// Speed mode: activations replicated over the gathered batch; projections
// split by heads / output channels, output projections split by input
// channels and summed with a forward allreduce.

namespace speed {

inline RankTensors attention(const TransformerLayerConfig& cfg, const AttentionParams& p, const RankTensors& x,
                             const AttentionMask& mask) {
  const std::size_t T = x.size();
  const std::size_t h = cfg.hidden_size, w = h / T, heads = cfg.num_attention_heads / T;
  RankTensors partial;
  for (std::size_t j = 0; j < T; ++j) {
    auto rows = [&](const Tensor& m) { return slice(m, 0, j * w, (j + 1) * w); };
    const Tensor q = add_bias(linear(x[j], rows(p.wq)), rows(p.bq));
    const Tensor k = add_bias(linear(x[j], rows(p.wk)), rows(p.bk));
    const Tensor v = add_bias(linear(x[j], rows(p.wv)), rows(p.bv));
    const Tensor ctx = attention_core(q, k, v, heads, cfg.attention_head_size, mask, cfg.causal_mask_size);
    Tensor y = linear(ctx, slice(p.wo, 1, j * w, (j + 1) * w));
    if (j == 0) y = add_bias(std::move(y), p.bo);
    partial.push_back(std::move(y));
  }
  return fwd_allreduce(partial);
}

inline RankTensors mlp(const TransformerLayerConfig& cfg, const MlpParams& p, const RankTensors& x) {
  const std::size_t T = x.size();
  const std::size_t w = cfg.intermediate_size / T;
  RankTensors partial;
  for (std::size_t j = 0; j < T; ++j) {
    const Tensor hid = activate(cfg.activation, add_bias(linear(x[j], slice(p.w1, 0, j * w, (j + 1) * w)),
                                                         slice(p.b1, 0, j * w, (j + 1) * w)));
    Tensor y = linear(hid, slice(p.w2, 1, j * w, (j + 1) * w));
    if (j == 0) y = add_bias(std::move(y), p.b2);
    partial.push_back(std::move(y));
  }
  return fwd_allreduce(partial);
}

inline RankTensors layernorm(const RankTensors& x, const LayerNormParams& p, double eps) {
  RankTensors out;
  for (const auto& t : x) out.push_back(reference_layernorm(t, p, eps));
  return out;
}

inline RankTensors add(const RankTensors& a, const RankTensors& b) {
  RankTensors out;
  for (std::size_t j = 0; j < a.size(); ++j) out.push_back(a[j] + b[j]);
  return out;
}

inline RankTensors layer(const TransformerLayerConfig& cfg, const TransformerLayerParams& p, const RankTensors& x,
                         const AttentionMask& mask) {
  const double eps = cfg.layernorm_epsilon;
  RankTensors in = cfg.pre_layernorm ? layernorm(x, p.attention_pre_ln, eps) : x;
  RankTensors h = add(x, attention(cfg, p.attention, in, mask));
  if (cfg.post_layernorm) h = layernorm(h, p.attention_post_ln, eps);
  in = cfg.pre_layernorm ? layernorm(h, p.mlp_pre_ln, eps) : h;
  RankTensors y = add(h, mlp(cfg, p.mlp, in));
  if (cfg.post_layernorm) y = layernorm(y, p.mlp_post_ln, eps);
  return y;
}

}  // namespace speed

// ---------------------------------------------------------------------------
// Memory mode: every activation is sharded by channel over the gathered
// batch. Projections are split by input channel and finished with a
// reduce-scatter over output channels; layer norm is distributed.

namespace memory {

/// Rows of the fused QKV weight ordered so that output block j holds
/// rank j's heads of Q, K and V.
inline Tensor fused_qkv(const Tensor& wq, const Tensor& wk, const Tensor& wv, std::size_t T) {
  const auto q = split(wq, 0, T), k = split(wk, 0, T), v = split(wv, 0, T);
  std::vector<Tensor> blocks;
  for (std::size_t j = 0; j < T; ++j) {
    blocks.push_back(q[j]);
    blocks.push_back(k[j]);
    blocks.push_back(v[j]);
  }
  return concat(std::span<const Tensor>(blocks), 0);
}

/// Input-split projection: rank k multiplies its channel shard with the
/// matching weight columns; a reduce-scatter sums the partials and leaves
/// output block j (plus its bias slice) on rank j.
inline RankTensors projection(const RankTensors& x, const Tensor& w, const Tensor& b) {
  const std::size_t T = x.size();
  const auto cols = split(w, 1, T);
  RankTensors partial;
  for (std::size_t k = 0; k < T; ++k) partial.push_back(linear(x[k], cols[k]));
  RankTensors out = reduce_scatter(partial, -1);
  const auto bias = split(b, 0, T);
  for (std::size_t j = 0; j < T; ++j) out[j] = add_bias(std::move(out[j]), bias[j]);
  return out;
}

inline RankTensors attention(const TransformerLayerConfig& cfg, const AttentionParams& p, const RankTensors& x,
                             const AttentionMask& mask) {
  const std::size_t T = x.size();
  const std::size_t w = cfg.hidden_size / T, heads = cfg.num_attention_heads / T;
  const Tensor wqkv = fused_qkv(p.wq, p.wk, p.wv, T);
  const Tensor bqkv = fused_qkv(p.bq.reshaped({p.bq.size(), 1}), p.bk.reshaped({p.bk.size(), 1}),
                                p.bv.reshaped({p.bv.size(), 1}), T)
                          .reshaped({3 * cfg.hidden_size});
  const RankTensors qkv = projection(x, wqkv, bqkv);
  RankTensors ctx;
  for (std::size_t j = 0; j < T; ++j) {
    const Tensor q = slice(qkv[j], -1, 0, w), k = slice(qkv[j], -1, w, 2 * w), v = slice(qkv[j], -1, 2 * w, 3 * w);
    ctx.push_back(attention_core(q, k, v, heads, cfg.attention_head_size, mask, cfg.causal_mask_size));
  }
  return projection(ctx, p.wo, p.bo);
}

inline RankTensors mlp(const TransformerLayerConfig& cfg, const MlpParams& p, const RankTensors& x) {
  RankTensors hid = projection(x, p.w1, p.b1);
  for (auto& t : hid) t = activate(cfg.activation, std::move(t));
  return projection(hid, p.w2, p.b2);
}

inline RankTensors add(const RankTensors& a, const RankTensors& b) { return speed::add(a, b); }

inline RankTensors layer(const TransformerLayerConfig& cfg, const TransformerLayerParams& p, const RankTensors& x,
                         const AttentionMask& mask) {
  const double eps = cfg.layernorm_epsilon;
  RankTensors in = cfg.pre_layernorm ? dist_layernorm_forward(x, p.attention_pre_ln, eps) : x;
  RankTensors h = add(x, attention(cfg, p.attention, in, mask));
  if (cfg.post_layernorm) h = dist_layernorm_forward(h, p.attention_post_ln, eps);
  in = cfg.pre_layernorm ? dist_layernorm_forward(h, p.mlp_pre_ln, eps) : h;
  RankTensors y = add(h, mlp(cfg, p.mlp, in));
  if (cfg.post_layernorm) y = dist_layernorm_forward(y, p.mlp_post_ln, eps);
  return y;
}

}  // namespace memory

// ---------------------------------------------------------------------------
// Entry/exit layout changes and public module forwards. Inputs and outputs
// are per-rank batches of shape [batch, seq, hidden]; each rank gets back
// the outputs for its own samples.

namespace detail {

struct Layout {
  RankTensors acts;
  AttentionMask mask;
};

inline Layout enter(const TransformerLayerConfig& cfg, const RankTensors& x, const std::vector<AttentionMask>& masks,
                    bool prescaled) {
  const std::size_t T = x.size();
  cfg.validate(T);
  for (const auto& t : x) {
    if (t.rank() != 3 || t.dim(2) != cfg.hidden_size) {
      throw ShapeError("transformer input " + shape_str(t.shape()) + " is not [batch, seq, " +
                       std::to_string(cfg.hidden_size) + "]");
    }
  }
  if (!masks.empty() && masks.size() != T) throw ShapeError("one attention mask per rank required");
  Layout out;
  if (prescaled) {
    out.mask = masks.empty() ? AttentionMask{} : masks.front();
    if (cfg.optimize == Optimize::Speed) {
      out.acts = x;
    } else {
      for (std::size_t j = 0; j < T; ++j) out.acts.push_back(split(x[j], -1, T)[j]);
    }
    return out;
  }
  out.mask = masks.empty() ? AttentionMask{} : concat_masks(masks);
  out.acts = cfg.optimize == Optimize::Speed ? allgather(x, 0) : scatter_and_merge(x, -1, 0);
  return out;
}

inline RankTensors leave(const TransformerLayerConfig& cfg, const RankTensors& y, bool prescaled) {
  const std::size_t T = y.size();
  if (prescaled) return cfg.optimize == Optimize::Speed ? y : allgather(y, -1);
  if (cfg.optimize == Optimize::Memory) return scatter_and_merge(y, 0, -1);
  RankTensors out;
  for (std::size_t j = 0; j < T; ++j) out.push_back(split(y[j], 0, T)[j]);
  return out;
}

}  // namespace detail

inline RankTensors dist_attention_forward(const TransformerLayerConfig& cfg, const AttentionParams& p,
                                          const RankTensors& x, const std::vector<AttentionMask>& masks = {},
                                          bool prescaled = false) {
  auto in = detail::enter(cfg, x, masks, prescaled);
  auto y = cfg.optimize == Optimize::Speed ? speed::attention(cfg, p, in.acts, in.mask)
                                           : memory::attention(cfg, p, in.acts, in.mask);
  return detail::leave(cfg, y, prescaled);
}

inline RankTensors dist_mlp_forward(const TransformerLayerConfig& cfg, const MlpParams& p, const RankTensors& x,
                                    bool prescaled = false) {
  auto in = detail::enter(cfg, x, {}, prescaled);
  auto y = cfg.optimize == Optimize::Speed ? speed::mlp(cfg, p, in.acts) : memory::mlp(cfg, p, in.acts);
  return detail::leave(cfg, y, prescaled);
}

inline RankTensors dist_transformer_layer_forward(const TransformerLayerConfig& cfg, const TransformerLayerParams& p,
                                                  const RankTensors& x, const std::vector<AttentionMask>& masks = {},
                                                  bool prescaled = false) {
  auto in = detail::enter(cfg, x, masks, prescaled);
  auto y = cfg.optimize == Optimize::Speed ? speed::layer(cfg, p, in.acts, in.mask)
                                           : memory::layer(cfg, p, in.acts, in.mask);
  return detail::leave(cfg, y, prescaled);
}

/// Stack of layers: the layout change happens once at entry and once at exit.
inline RankTensors dist_transformer_forward(const TransformerLayerConfig& cfg,
                                            const std::vector<TransformerLayerParams>& layers, const RankTensors& x,
                                            const std::vector<AttentionMask>& masks = {}, bool prescaled = false) {
  auto in = detail::enter(cfg, x, masks, prescaled);
  RankTensors h = in.acts;
  for (const auto& p : layers) {
    h = cfg.optimize == Optimize::Speed ? speed::layer(cfg, p, h, in.mask) : memory::layer(cfg, p, h, in.mask);
  }
  return detail::leave(cfg, h, prescaled);
}

}  // namespace mpsim::tp
