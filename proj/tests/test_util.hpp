#pragma once

// Shared helpers for the test suites: random model construction and
// small independent reference computations.

#include <cstdint>
#include <random>
#include <vector>

#include "moescope/model.hpp"
#include "moescope/tensor.hpp"

namespace testutil {

using moescope::ExpertWeights;
using moescope::LayerKind;
using moescope::ModelConfig;
using moescope::MoELayerWeights;
using moescope::MoEModel;
using moescope::Tensor2D;

inline Tensor2D random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng,
                              double scale = 0.1) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor2D t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      t.at(i, j) = static_cast<float>(dist(rng));
    }
  }
  return t;
}

struct ModelParams {
  std::size_t layers = 2;
  std::size_t hidden = 8;
  std::size_t heads = 2;
  std::size_t vocab = 16;
  std::size_t ffn_hidden = 8;
  std::size_t experts = 4;  // 0 => dense
  std::size_t top_k = 2;
  bool shared = false;
  bool rotary = true;
  double scale = 0.1;
};

inline MoEModel random_model(const ModelParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MoEModel m;
  m.config.num_layers = p.layers;
  m.config.hidden_dim = p.hidden;
  m.config.num_heads = p.heads;
  m.config.head_dim = p.hidden / p.heads;
  m.config.vocab_size = p.vocab;
  m.config.ffn_hidden_dim = p.ffn_hidden;
  m.config.top_k = p.top_k;
  m.config.positional_mode = p.rotary ? moescope::PositionalMode::kRotary
                                      : moescope::PositionalMode::kNone;
  m.config.layers.assign(p.layers, LayerKind{p.experts, p.shared});

  m.embedding = random_tensor(p.vocab, p.hidden, rng, p.scale);
  auto rand_expert = [&] {
    ExpertWeights e;
    e.wg = random_tensor(p.hidden, p.ffn_hidden, rng, p.scale);
    e.wu = random_tensor(p.hidden, p.ffn_hidden, rng, p.scale);
    e.wd = random_tensor(p.ffn_hidden, p.hidden, rng, p.scale);
    return e;
  };
  for (std::size_t l = 0; l < p.layers; ++l) {
    moescope::AttentionWeights a;
    a.wq = random_tensor(p.hidden, p.hidden, rng, p.scale);
    a.wk = random_tensor(p.hidden, p.hidden, rng, p.scale);
    a.wv = random_tensor(p.hidden, p.hidden, rng, p.scale);
    a.wo = random_tensor(p.hidden, p.hidden, rng, p.scale);
    a.norm_gain.assign(p.hidden, 1.0f);
    m.attn.push_back(std::move(a));

    MoELayerWeights w;
    const std::size_t n_ffn = p.experts == 0 ? 1 : p.experts;
    for (std::size_t e = 0; e < n_ffn; ++e) w.experts.push_back(rand_expert());
    if (p.experts > 0) w.router = random_tensor(p.hidden, p.experts, rng, p.scale);
    if (p.shared) w.shared = rand_expert();
    w.norm_gain.assign(p.hidden, 1.0f);
    m.ffn.push_back(std::move(w));
  }
  m.final_norm_gain.assign(p.hidden, 1.0f);
  m.unembedding = random_tensor(p.hidden, p.vocab, rng, p.scale);
  m.validate();
  return m;
}

// All-zero weights, unit gains: the residual stream passes embeddings
// through untouched and the logits are identically zero.
inline MoEModel zero_model(const ModelParams& p) {
  MoEModel m = random_model(p, 0);
  auto zero = [](Tensor2D& t) { std::fill(t.data().begin(), t.data().end(), 0.0f); };
  zero(m.embedding);
  zero(m.unembedding);
  for (auto& a : m.attn) {
    zero(a.wq);
    zero(a.wk);
    zero(a.wv);
    zero(a.wo);
  }
  for (auto& f : m.ffn) {
    if (f.router.size() > 0) zero(f.router);
    for (auto& e : f.experts) {
      zero(e.wg);
      zero(e.wu);
      zero(e.wd);
    }
    if (f.shared) {
      zero(f.shared->wg);
      zero(f.shared->wu);
      zero(f.shared->wd);
    }
  }
  return m;
}

inline std::vector<std::uint32_t> random_tokens(std::size_t n, std::size_t vocab,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> dist(
      0, static_cast<std::uint32_t>(vocab - 1));
  std::vector<std::uint32_t> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

}  // namespace testutil
