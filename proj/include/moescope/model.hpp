#pragma once

// Architecture description and weight containers for a small MoE
// decoder stack: embedding, per-layer attention + (MoE | dense FFN),
// final norm, unembedding.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moescope/tensor.hpp"

namespace moescope {

enum class PositionalMode { kNone, kRotary };

struct LayerKind {
  std::size_t num_experts = 0;  // 0 => dense FFN layer
  bool has_shared_expert = false;
};

struct ModelConfig {
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_heads = 0;
  std::size_t head_dim = 0;
  std::size_t vocab_size = 0;
  std::size_t ffn_hidden_dim = 0;
  std::size_t top_k = 1;
  PositionalMode positional_mode = PositionalMode::kRotary;
  bool renormalize_topk = false;
  float norm_epsilon = 1e-6f;
  std::vector<LayerKind> layers;  // length num_layers

  void validate() const {
    if (num_layers == 0 || hidden_dim == 0 || num_heads == 0 ||
        vocab_size == 0 || ffn_hidden_dim == 0) {
      throw std::invalid_argument("ModelConfig: zero dimension");
    }
    if (hidden_dim != num_heads * head_dim) {
      throw std::invalid_argument("ModelConfig: hidden_dim != num_heads * head_dim");
    }
    if (layers.size() != num_layers) {
      throw std::invalid_argument("ModelConfig: layers list length != num_layers");
    }
    if (!(norm_epsilon > 0.0f)) {
      throw std::invalid_argument("ModelConfig: norm_epsilon must be positive");
    }
    for (const LayerKind& lk : layers) {
      if (lk.num_experts > 0 && (top_k < 1 || top_k > lk.num_experts)) {
        throw std::invalid_argument("ModelConfig: top_k out of [1, E]");
      }
    }
  }

  std::size_t max_experts() const {
    std::size_t m = 0;
    for (const LayerKind& lk : layers) m = std::max(m, lk.num_experts);
    return m;
  }
  bool any_shared() const {
    for (const LayerKind& lk : layers) {
      if (lk.has_shared_expert) return true;
    }
    return false;
  }
};

struct AttentionWeights {
  Tensor2D wq, wk, wv, wo;         // each d x d
  std::vector<float> norm_gain;    // d
};

struct ExpertWeights {
  Tensor2D wg;  // d x ffn_hidden
  Tensor2D wu;  // d x ffn_hidden
  Tensor2D wd;  // ffn_hidden x d, the down_proj whose output is profiled
};

struct MoELayerWeights {
  Tensor2D router;                       // d x E; empty for dense layers
  std::vector<ExpertWeights> experts;    // E routed experts, or 1 for dense
  std::optional<ExpertWeights> shared;   // shared expert, always-on
  std::vector<float> norm_gain;          // d
};

struct MoEModel {
  ModelConfig config;
  Tensor2D embedding;    // vocab x d
  std::vector<AttentionWeights> attn;  // per layer
  std::vector<MoELayerWeights> ffn;    // per layer
  std::vector<float> final_norm_gain;  // d
  Tensor2D unembedding;  // d x vocab

  void validate() const {
    config.validate();
    const std::size_t d = config.hidden_dim;
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("MoEModel: bad shape for " + what);
    };
    check(embedding.rows() == config.vocab_size && embedding.cols() == d, "embedding");
    check(unembedding.rows() == d && unembedding.cols() == config.vocab_size,
          "unembedding");
    check(final_norm_gain.size() == d, "final_norm");
    check(attn.size() == config.num_layers && ffn.size() == config.num_layers,
          "layer count");
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      const AttentionWeights& a = attn[l];
      check(a.wq.rows() == d && a.wq.cols() == d, "wq");
      check(a.wk.rows() == d && a.wk.cols() == d, "wk");
      check(a.wv.rows() == d && a.wv.cols() == d, "wv");
      check(a.wo.rows() == d && a.wo.cols() == d, "wo");
      check(a.norm_gain.size() == d, "attn norm");
      const LayerKind& lk = config.layers[l];
      const MoELayerWeights& m = ffn[l];
      check(m.norm_gain.size() == d, "ffn norm");
      const std::size_t n_ffn = lk.num_experts == 0 ? 1 : lk.num_experts;
      check(m.experts.size() == n_ffn, "expert list length");
      if (lk.num_experts > 0) {
        check(m.router.rows() == d && m.router.cols() == lk.num_experts, "router");
      }
      check(m.shared.has_value() == lk.has_shared_expert, "shared expert presence");
      auto check_expert = [&](const ExpertWeights& e) {
        check(e.wg.rows() == d && e.wg.cols() == config.ffn_hidden_dim, "wg");
        check(e.wu.rows() == d && e.wu.cols() == config.ffn_hidden_dim, "wu");
        check(e.wd.rows() == config.ffn_hidden_dim && e.wd.cols() == d, "wd");
      };
      for (const ExpertWeights& e : m.experts) check_expert(e);
      if (m.shared) check_expert(*m.shared);
    }
  }
};

// Expert slot convention: 0..E-1 are routed experts, kSharedSlot marks the
// shared expert (stored as the last heatmap column).
inline constexpr int kSharedSlot = -1;

struct DecoderState {
  std::vector<Tensor2D> post_attn;  // H^{l'} per layer, n x d
  std::vector<Tensor2D> post_ffn;   // H^l per layer, n x d
  Tensor2D logits;                  // n x vocab
};

}  // namespace moescope
