#pragma once

// Full-sequence forward pass through the MoE decoder stack:
//   H^{l'} = H^{l-1} + MHSA(LN(H^{l-1}))
//   H^{l}  = H^{l'}  + MoE(LN(H^{l'}))
// followed by final norm and the unembedding projection.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moescope/model.hpp"
#include "moescope/prune.hpp"
#include "moescope/trace.hpp"

namespace moescope {

struct RouterOutput {
  std::vector<std::size_t> selected;  // k distinct indices, by descending weight
  std::vector<double> weights;        // matching gate values
};

namespace detail {

constexpr double kRotaryBase = 10000.0;

// In-place rotary embedding on one head slice: pairs (2i, 2i+1),
// angle = pos * base^(-2i / head_dim).
inline void apply_rotary(float* head, std::size_t head_dim, std::size_t pos) {
  for (std::size_t i = 0; i + 1 < head_dim; i += 2) {
    const double theta =
        static_cast<double>(pos) *
        std::pow(kRotaryBase, -static_cast<double>(i) / static_cast<double>(head_dim));
    const double c = std::cos(theta), s = std::sin(theta);
    const double a = head[i], b = head[i + 1];
    head[i] = static_cast<float>(a * c - b * s);
    head[i + 1] = static_cast<float>(a * s + b * c);
  }
}

}  // namespace detail

// Multi-head causal self-attention over a normed input block.
// h_prev is the raw residual stream; normalization happens here.
inline Tensor2D mhsa_forward(const Tensor2D& h_prev, const AttentionWeights& w,
                             const ModelConfig& cfg, std::size_t layer,
                             TraceHooks* hooks) {
  const std::size_t n = h_prev.rows();
  const std::size_t d = cfg.hidden_dim;
  const std::size_t dk = cfg.head_dim;
  if (h_prev.cols() != d) {
    throw std::invalid_argument("mhsa_forward: hidden dim mismatch");
  }

  Tensor2D normed(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> row(h_prev.row_ptr(i), h_prev.row_ptr(i) + d);
    std::vector<float> nr = rms_norm(row, w.norm_gain, cfg.norm_epsilon);
    std::copy(nr.begin(), nr.end(), normed.row_ptr(i));
  }

  Tensor2D q = matmul(normed, w.wq);
  Tensor2D k = matmul(normed, w.wk);
  Tensor2D v = matmul(normed, w.wv);

  if (cfg.positional_mode == PositionalMode::kRotary) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        detail::apply_rotary(q.row_ptr(i) + h * dk, dk, i);
        detail::apply_rotary(k.row_ptr(i) + h * dk, dk, i);
      }
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor2D concat(n, d);
  std::vector<Tensor2D> captured;
  if (hooks && hooks->capture_attention()) captured.reserve(cfg.num_heads);

  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    Tensor2D scores(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dk; ++c) {
          acc += static_cast<double>(q.at(i, h * dk + c)) *
                 static_cast<double>(k.at(j, h * dk + c));
        }
        scores.at(i, j) = static_cast<float>(acc * scale);
      }
    }
    Tensor2D attn = softmax_masked(scores, /*causal=*/true);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          acc += static_cast<double>(attn.at(i, j)) *
                 static_cast<double>(v.at(j, h * dk + c));
        }
        concat.at(i, h * dk + c) = static_cast<float>(acc);
      }
    }
    if (hooks && hooks->capture_attention()) captured.push_back(std::move(attn));
  }

  if (hooks && hooks->capture_attention()) {
    hooks->record_attention(layer, std::move(captured));
  }
  return matmul(concat, w.wo);
}

// Per-token gating: softmax over the candidate experts, then top-k with
// ties broken by ascending expert index. Excluded experts are removed
// from the candidate set before the softmax.
inline std::vector<RouterOutput> route_tokens(
    const Tensor2D& h_normed, const Tensor2D& w_g, std::size_t k,
    bool renormalize, const std::vector<bool>* excluded = nullptr) {
  const std::size_t num_experts = w_g.cols();
  std::size_t candidates = num_experts;
  if (excluded) {
    for (bool e : *excluded) {
      if (e) --candidates;
    }
  }
  if (k > candidates) {
    throw std::invalid_argument("route_tokens: fewer than k candidate experts");
  }
  Tensor2D logits = matmul(h_normed, w_g);
  std::vector<RouterOutput> out(h_normed.rows());
  for (std::size_t t = 0; t < h_normed.rows(); ++t) {
    std::vector<double> row(num_experts);
    for (std::size_t e = 0; e < num_experts; ++e) {
      row[e] = (excluded && (*excluded)[e])
                   ? -std::numeric_limits<double>::infinity()
                   : static_cast<double>(logits.at(t, e));
    }
    std::vector<double> gates = softmax_vec(row);
    std::vector<std::size_t> order(num_experts);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return gates[a] > gates[b];  // stable => ascending index on ties
    });
    RouterOutput& ro = out[t];
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      ro.selected.push_back(order[i]);
      ro.weights.push_back(gates[order[i]]);
      sum += gates[order[i]];
    }
    if (renormalize && sum > 0.0) {
      for (double& w : ro.weights) w /= sum;
    }
  }
  return out;
}

// FFN(x) = (silu(x Wg) ⊙ x Wu) Wd; reports max|output| to the trace as
// this token's a_{l,e} sample.
inline std::vector<float> expert_ffn(const std::vector<float>& x,
                                     const ExpertWeights& w, TraceHooks* hooks,
                                     std::size_t layer, int expert_slot) {
  std::vector<float> g = vecmat(x, w.wg);
  std::vector<float> u = vecmat(x, w.wu);
  std::vector<float> h(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    h[i] = static_cast<float>(silu(static_cast<double>(g[i])) *
                              static_cast<double>(u[i]));
  }
  std::vector<float> y = vecmat(h, w.wd);
  if (hooks) {
    float m = 0.0f;
    for (float v : y) m = std::max(m, std::fabs(v));
    hooks->record_expert_output(layer, expert_slot, m);
  }
  return y;
}

// One MoE (or dense-FFN) block including the residual add.
inline Tensor2D moe_layer_forward(const Tensor2D& h_after_attn,
                                  const MoELayerWeights& w, const ModelConfig& cfg,
                                  std::size_t layer, TraceHooks* hooks,
                                  const PruneSpec& prune) {
  const std::size_t n = h_after_attn.rows();
  const std::size_t d = cfg.hidden_dim;
  const LayerKind& lk = cfg.layers[layer];
  Tensor2D out = h_after_attn;

  Tensor2D normed(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> row(h_after_attn.row_ptr(i), h_after_attn.row_ptr(i) + d);
    std::vector<float> nr = rms_norm(row, w.norm_gain, cfg.norm_epsilon);
    std::copy(nr.begin(), nr.end(), normed.row_ptr(i));
  }

  if (lk.num_experts == 0) {
    // Dense layer: single always-on FFN, not part of the expert profile.
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<float> x(normed.row_ptr(t), normed.row_ptr(t) + d);
      std::vector<float> y = expert_ffn(x, w.experts[0], nullptr, layer, 0);
      for (std::size_t c = 0; c < d; ++c) out.at(t, c) += y[c];
    }
    return out;
  }

  std::vector<bool> excluded(lk.num_experts, false);
  std::vector<bool> zeroed(lk.num_experts, false);
  bool shared_pruned = false;
  for (const PruneTarget& tgt : prune.targets) {
    if (tgt.layer != layer) continue;
    if (tgt.expert == kSharedSlot) {
      shared_pruned = true;
    } else if (prune.mode == PruneMode::kRouteExclusion) {
      excluded[static_cast<std::size_t>(tgt.expert)] = true;
    } else {
      zeroed[static_cast<std::size_t>(tgt.expert)] = true;
    }
  }

  std::vector<RouterOutput> routes = route_tokens(
      normed, w.router, cfg.top_k, cfg.renormalize_topk, &excluded);

  for (std::size_t t = 0; t < n; ++t) {
    std::vector<float> x(normed.row_ptr(t), normed.row_ptr(t) + d);
    for (std::size_t i = 0; i < routes[t].selected.size(); ++i) {
      const std::size_t e = routes[t].selected[i];
      const double gw = routes[t].weights[i];
      if (zeroed[e]) {
        if (hooks) hooks->record_expert_output(layer, static_cast<int>(e), 0.0f);
        continue;
      }
      std::vector<float> y = expert_ffn(x, w.experts[e], hooks, layer,
                                        static_cast<int>(e));
      for (std::size_t c = 0; c < d; ++c) {
        out.at(t, c) += static_cast<float>(gw * static_cast<double>(y[c]));
      }
    }
    if (w.shared) {
      if (shared_pruned) {
        if (hooks) hooks->record_expert_output(layer, kSharedSlot, 0.0f);
      } else {
        std::vector<float> y = expert_ffn(x, *w.shared, hooks, layer, kSharedSlot);
        for (std::size_t c = 0; c < d; ++c) out.at(t, c) += y[c];
      }
    }
  }
  return out;
}

inline DecoderState model_forward(const std::vector<std::uint32_t>& tokens,
                                  const MoEModel& model, TraceHooks* hooks,
                                  const PruneSpec& prune = {}) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) {
    throw std::invalid_argument("model_forward: empty token sequence");
  }
  prune.validate(cfg);
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.hidden_dim;

  Tensor2D h(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw std::invalid_argument("model_forward: token id out of vocabulary");
    }
    std::copy(model.embedding.row_ptr(tokens[i]),
              model.embedding.row_ptr(tokens[i]) + d, h.row_ptr(i));
  }

  DecoderState state;
  state.post_attn.reserve(cfg.num_layers);
  state.post_ffn.reserve(cfg.num_layers);

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    Tensor2D o = mhsa_forward(h, model.attn[l], cfg, l, hooks);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) h.at(i, c) += o.at(i, c);
    }
    state.post_attn.push_back(h);
    h = moe_layer_forward(h, model.ffn[l], cfg, l, hooks, prune);
    state.post_ffn.push_back(h);
    if (hooks) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> row(h.row_ptr(i), h.row_ptr(i) + d);
        hooks->record_hidden_row(l, row_stats(row));
      }
    }
  }

  state.logits = Tensor2D(n, cfg.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> row(h.row_ptr(i), h.row_ptr(i) + d);
    std::vector<float> normed = rms_norm(row, model.final_norm_gain, cfg.norm_epsilon);
    std::vector<float> logits = vecmat(normed, model.unembedding);
    std::copy(logits.begin(), logits.end(), state.logits.row_ptr(i));
  }
  return state;
}

}  // namespace moescope
