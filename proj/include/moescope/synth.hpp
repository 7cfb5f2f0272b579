#pragma once

// Synthetic desk-scale MoE models with planted super experts, planted
// attention sinks, and synthetic corpora. Construction is calibrated:
// each plant is installed in ascending layer order, with a probe
// forward pass measuring the normed hidden state the plant keys on.
//
// Channel layout inside the hidden dimension:
//   dim 0        anchor channel: the anchor token's embedding carries a
//                large component here; first-layer plants key on it
//   injection_dim per-plant target of the down_proj outlier
//   dim d-2      signal channel: sink-coupled layers copy the massive
//                dimension here through W_V/W_O, and the unembedding
//                turns it into a vocabulary preference
//   dim d-1      bias channel: every embedding carries 1.0 here, giving
//                all queries a constant positive component after norm

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "moescope/forward.hpp"
#include "moescope/model.hpp"

namespace moescope {

inline constexpr std::uint32_t kAnchorToken = 0;

struct Plant {
  std::size_t layer = 0;
  int expert = 0;  // routed index or kSharedSlot
  std::size_t injection_dim = 0;
  double injection_scale = 0.0;
};

struct PlantSpec {
  ModelConfig config;
  std::vector<Plant> planted;
  bool cascade = false;        // later plants key on the massive dimension
  bool sink_coupling = false;  // wire attention so position 0 becomes a sink
  std::uint64_t seed = 0;
};

namespace synth_detail {

constexpr std::size_t kAnchorChannel = 0;
constexpr double kBackgroundScale = 0.02;
constexpr double kGateSaturation = 8.0;   // alpha_g: silu input at the anchor
constexpr double kRouterBias = 12.0;      // planted logit at the anchor
constexpr double kSinkScore = 10.0;       // target sink attention logit
constexpr double kLogitGap = 2.0;         // common-vs-rare vocabulary gap

inline Tensor2D random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kBackgroundScale);
  Tensor2D t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      t.at(i, j) = static_cast<float>(dist(rng));
    }
  }
  return t;
}

inline ExpertWeights random_expert(const ModelConfig& cfg, std::mt19937_64& rng) {
  ExpertWeights e;
  e.wg = random_tensor(cfg.hidden_dim, cfg.ffn_hidden_dim, rng);
  e.wu = random_tensor(cfg.hidden_dim, cfg.ffn_hidden_dim, rng);
  e.wd = random_tensor(cfg.ffn_hidden_dim, cfg.hidden_dim, rng);
  return e;
}

// Normed input to the MoE block of `layer`, at sequence position `pos`.
inline std::vector<float> normed_moe_input(const MoEModel& model,
                                           const std::vector<std::uint32_t>& probe,
                                           std::size_t layer, std::size_t pos) {
  DecoderState st = model_forward(probe, model, nullptr);
  const Tensor2D& h = st.post_attn[layer];
  std::vector<float> row(h.row_ptr(pos), h.row_ptr(pos) + h.cols());
  return rms_norm(row, model.ffn[layer].norm_gain, model.config.norm_epsilon);
}

// Normed input to the attention block of `layer`, at position `pos`.
inline std::vector<float> normed_attn_input(const MoEModel& model,
                                            const std::vector<std::uint32_t>& probe,
                                            std::size_t layer, std::size_t pos) {
  DecoderState st = model_forward(probe, model, nullptr);
  std::vector<float> row;
  if (layer == 0) {
    const std::size_t d = model.config.hidden_dim;
    row.assign(model.embedding.row_ptr(probe[pos]),
               model.embedding.row_ptr(probe[pos]) + d);
  } else {
    const Tensor2D& h = st.post_ffn[layer - 1];
    row.assign(h.row_ptr(pos), h.row_ptr(pos) + h.cols());
  }
  return rms_norm(row, model.attn[layer].norm_gain, model.config.norm_epsilon);
}

}  // namespace synth_detail

inline std::vector<std::vector<std::uint32_t>> gen_corpus(std::size_t vocab,
                                                          std::size_t num_seqs,
                                                          std::size_t seq_len,
                                                          std::uint64_t seed) {
  if (vocab < 2 || num_seqs == 0 || seq_len == 0) {
    throw std::invalid_argument("gen_corpus: all counts must be >= 1 (vocab >= 2)");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> dist(
      1, static_cast<std::uint32_t>(vocab - 1));
  std::vector<std::vector<std::uint32_t>> corpus(num_seqs);
  for (auto& seq : corpus) {
    seq.resize(seq_len);
    seq[0] = kAnchorToken;
    for (std::size_t i = 1; i < seq_len; ++i) seq[i] = dist(rng);
  }
  return corpus;
}

inline MoEModel build_planted_model(const PlantSpec& spec) {
  using namespace synth_detail;
  const ModelConfig& cfg = spec.config;
  cfg.validate();
  const std::size_t d = cfg.hidden_dim;
  const std::size_t bias_ch = d - 1;
  const std::size_t signal_ch = d - 2;
  if (d < 8) {
    throw std::invalid_argument("build_planted_model: hidden_dim too small");
  }

  std::size_t max_plant_layer = 0;
  for (const Plant& p : spec.planted) {
    if (p.layer >= cfg.num_layers || 2 * p.layer > cfg.num_layers) {
      throw std::invalid_argument("build_planted_model: planted layer not early");
    }
    if (p.injection_dim >= d || p.injection_dim == kAnchorChannel ||
        p.injection_dim == bias_ch || p.injection_dim == signal_ch) {
      throw std::invalid_argument("build_planted_model: bad injection_dim");
    }
    const LayerKind& lk = cfg.layers[p.layer];
    if (p.expert == kSharedSlot) {
      if (!lk.has_shared_expert) {
        throw std::invalid_argument("build_planted_model: no shared expert to plant");
      }
    } else if (p.expert < 0 ||
               static_cast<std::size_t>(p.expert) >= lk.num_experts) {
      throw std::invalid_argument("build_planted_model: expert out of range");
    }
    if (!(p.injection_scale > 0.0)) {
      throw std::invalid_argument("build_planted_model: injection_scale must be > 0");
    }
    max_plant_layer = std::max(max_plant_layer, p.layer);
  }
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    std::size_t routed_here = 0;
    for (const Plant& p : spec.planted) {
      if (p.layer == l && p.expert != kSharedSlot) ++routed_here;
    }
    if (routed_here > cfg.top_k) {
      throw std::invalid_argument(
          "build_planted_model: more routed plants in a layer than top_k");
    }
  }

  std::mt19937_64 rng(spec.seed);
  MoEModel model;
  model.config = cfg;
  model.embedding = random_tensor(cfg.vocab_size, d, rng);
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    model.embedding.at(v, bias_ch) = 1.0f;
  }
  model.embedding.at(kAnchorToken, kAnchorChannel) = 3.0f;

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    AttentionWeights a;
    a.wq = random_tensor(d, d, rng);
    a.wk = random_tensor(d, d, rng);
    a.wv = random_tensor(d, d, rng);
    a.wo = random_tensor(d, d, rng);
    a.norm_gain.assign(d, 1.0f);
    model.attn.push_back(std::move(a));

    const LayerKind& lk = cfg.layers[l];
    MoELayerWeights m;
    const std::size_t n_ffn = lk.num_experts == 0 ? 1 : lk.num_experts;
    for (std::size_t e = 0; e < n_ffn; ++e) {
      m.experts.push_back(random_expert(cfg, rng));
    }
    if (lk.num_experts > 0) {
      m.router = random_tensor(d, lk.num_experts, rng);
    }
    if (lk.has_shared_expert) {
      m.shared = random_expert(cfg, rng);
    }
    m.norm_gain.assign(d, 1.0f);
    model.ffn.push_back(std::move(m));
  }
  model.final_norm_gain.assign(d, 1.0f);
  model.unembedding = random_tensor(d, cfg.vocab_size, rng);

  // Calibration probe; position 0 is causally isolated, so everything
  // keyed on it is independent of the rest of the corpus.
  std::vector<std::uint32_t> probe = {kAnchorToken};
  for (std::uint32_t t = 1; t < 8; ++t) {
    probe.push_back(1 + t % static_cast<std::uint32_t>(cfg.vocab_size - 1));
  }

  // Install plants in ascending layer order; each calibration pass sees
  // the plants already installed below it.
  std::vector<std::size_t> order(spec.planted.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.planted[a].layer < spec.planted[b].layer;
  });

  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const Plant& p = spec.planted[order[oi]];
    const std::size_t key_ch = (spec.cascade && oi > 0)
                                   ? spec.planted[order[oi - 1]].injection_dim
                                   : kAnchorChannel;
    std::vector<float> xhat = normed_moe_input(model, probe, p.layer, 0);
    const double s = static_cast<double>(xhat[key_ch]);
    if (std::fabs(s) < 1e-3) {
      throw std::invalid_argument(
          "build_planted_model: keying channel has no signal at the anchor");
    }
    MoELayerWeights& m = model.ffn[p.layer];
    if (p.expert != kSharedSlot) {
      m.router.at(key_ch, static_cast<std::size_t>(p.expert)) +=
          static_cast<float>(kRouterBias / s);
    }
    ExpertWeights& e = p.expert == kSharedSlot
                           ? *m.shared
                           : m.experts[static_cast<std::size_t>(p.expert)];
    for (std::size_t r = 0; r < d; ++r) {
      e.wg.at(r, 0) = 0.0f;
      e.wu.at(r, 0) = 0.0f;
    }
    e.wg.at(key_ch, 0) = static_cast<float>(kGateSaturation / s);
    e.wu.at(key_ch, 0) = static_cast<float>(1.0 / s);
    for (std::size_t c = 0; c < d; ++c) {
      e.wd.at(0, c) = 0.0f;
    }
    e.wd.at(0, p.injection_dim) =
        static_cast<float>(p.injection_scale / silu(kGateSaturation));
  }

  if (spec.sink_coupling) {
    if (spec.planted.empty()) {
      throw std::invalid_argument("build_planted_model: sink_coupling needs a plant");
    }
    if (max_plant_layer + 1 >= cfg.num_layers) {
      throw std::invalid_argument("build_planted_model: no layers left to couple");
    }
    const std::size_t massive_dim = spec.planted[order.back()].injection_dim;
    const std::size_t dk = cfg.head_dim;
    for (std::size_t l = max_plant_layer + 1; l < cfg.num_layers; ++l) {
      std::vector<float> sink_key = normed_attn_input(model, probe, l, 0);
      std::vector<float> query = normed_attn_input(model, probe, l, 1);
      const double ku = static_cast<double>(sink_key[massive_dim]);
      const double qb = static_cast<double>(query[bias_ch]);
      if (std::fabs(ku) < 1e-3 || std::fabs(qb) < 1e-3) {
        throw std::invalid_argument(
            "build_planted_model: sink coupling channels have no signal");
      }
      const double target = kSinkScore * std::sqrt(static_cast<double>(dk));
      const double w = std::sqrt(std::fabs(target / (ku * qb)));
      AttentionWeights& a = model.attn[l];
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        // Lowest-frequency rotary pair, so position rotation is negligible.
        const std::size_t col = h * dk + (dk - 2);
        a.wk.at(massive_dim, col) = static_cast<float>(w * (ku < 0 ? -1.0 : 1.0));
        a.wq.at(bias_ch, col) = static_cast<float>(w * (qb < 0 ? -1.0 : 1.0));
      }
      // Signal path through head 0: the sink value writes the signal
      // channel, turning sink attention into a vocabulary preference.
      const double v = std::sqrt(std::fabs(1.0 / ku));
      a.wv.at(massive_dim, 0) = static_cast<float>(v * (ku < 0 ? -1.0 : 1.0));
      a.wo.at(0, signal_ch) = static_cast<float>(v);
    }

    // Unembedding: map the signal channel to a preference for the lower
    // half of the vocabulary, calibrated on a mid-sequence position.
    DecoderState st = model_forward(probe, model, nullptr);
    const Tensor2D& h = st.post_ffn[cfg.num_layers - 1];
    std::vector<float> row(h.row_ptr(probe.size() / 2),
                           h.row_ptr(probe.size() / 2) + d);
    std::vector<float> fhat = rms_norm(row, model.final_norm_gain, cfg.norm_epsilon);
    const double xc = static_cast<double>(fhat[signal_ch]);
    if (std::fabs(xc) < 1e-3) {
      throw std::invalid_argument("build_planted_model: signal channel dead");
    }
    for (std::size_t vtok = 0; vtok < cfg.vocab_size; ++vtok) {
      model.unembedding.at(signal_ch, vtok) =
          static_cast<float>(vtok < cfg.vocab_size / 2 ? kLogitGap / xc : 0.0);
    }
    for (const Plant& p : spec.planted) {
      for (std::size_t vtok = 0; vtok < cfg.vocab_size; ++vtok) {
        model.unembedding.at(p.injection_dim, vtok) = 0.0f;
      }
    }
  }

  model.validate();
  return model;
}

}  // namespace moescope
