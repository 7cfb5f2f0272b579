#pragma once

// Instrumentation collected during forward passes: per-expert down_proj
// output magnitudes, per-layer hidden-state extrema, and optional
// attention maps for a single probe input. Traces from independent
// passes merge by elementwise max / summed counts.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "moescope/model.hpp"
#include "moescope/tensor.hpp"

namespace moescope {

// a_{l,e}: running max over tokens of max|down_proj output| per
// (layer, expert slot). Column E is the shared-expert slot.
struct ExpertMagnitudeMatrix {
  std::size_t num_layers = 0;
  std::size_t num_slots = 0;  // max routed experts + 1 shared column
  std::vector<float> magnitudes;       // num_layers * num_slots
  std::vector<std::uint64_t> counts;   // routed-token counters, same shape

  float mag(std::size_t l, std::size_t slot) const {
    return magnitudes[l * num_slots + slot];
  }
  std::uint64_t count(std::size_t l, std::size_t slot) const {
    return counts[l * num_slots + slot];
  }
};

struct LayerHiddenStats {
  float max_abs = 0.0f;        // max over all rows and samples of max|H^l row|
  float median_at_max = 0.0f;  // median_abs of the row achieving that max
  std::uint64_t rows_seen = 0;
};

struct HiddenStatsTrace {
  std::vector<LayerHiddenStats> layers;
};

// A^{l,k} matrices for one designated probe input.
struct AttentionCapture {
  // [layer][head] -> n x n attention matrix; empty until a probe runs.
  std::vector<std::vector<Tensor2D>> maps;
  bool captured = false;
};

class TraceHooks {
 public:
  TraceHooks() = default;

  TraceHooks(const ModelConfig& cfg, bool capture_attention)
      : capture_attention_(capture_attention) {
    mags_.num_layers = cfg.num_layers;
    mags_.num_slots = cfg.max_experts() + 1;  // final column = shared slot
    mags_.magnitudes.assign(mags_.num_layers * mags_.num_slots, 0.0f);
    mags_.counts.assign(mags_.num_layers * mags_.num_slots, 0);
    hidden_.layers.assign(cfg.num_layers, LayerHiddenStats{});
    if (capture_attention_) {
      attn_.maps.assign(cfg.num_layers, {});
    }
  }

  bool capture_attention() const { return capture_attention_; }

  // slot: routed expert index, or kSharedSlot for the shared expert.
  void record_expert_output(std::size_t layer, int slot, float max_abs_out) {
    const std::size_t s =
        slot == kSharedSlot ? mags_.num_slots - 1 : static_cast<std::size_t>(slot);
    const std::size_t idx = layer * mags_.num_slots + s;
    mags_.magnitudes[idx] = std::max(mags_.magnitudes[idx], max_abs_out);
    mags_.counts[idx] += 1;
  }

  void record_hidden_row(std::size_t layer, const RowStats& rs) {
    LayerHiddenStats& st = hidden_.layers[layer];
    if (rs.max_abs > st.max_abs) {
      st.max_abs = rs.max_abs;
      st.median_at_max = rs.median_abs;
    }
    st.rows_seen += 1;
  }

  // Keeps only the first probe's maps; later passes leave them untouched.
  void record_attention(std::size_t layer, std::vector<Tensor2D> per_head) {
    if (!capture_attention_ || attn_.captured) return;
    attn_.maps[layer] = std::move(per_head);
    if (layer + 1 == attn_.maps.size()) attn_.captured = true;
  }

  const ExpertMagnitudeMatrix& magnitudes() const { return mags_; }
  const HiddenStatsTrace& hidden_stats() const { return hidden_; }
  const AttentionCapture& attention() const { return attn_; }

  void merge(const TraceHooks& other) {
    if (mags_.num_layers != other.mags_.num_layers ||
        mags_.num_slots != other.mags_.num_slots) {
      throw std::invalid_argument("TraceHooks::merge: shape mismatch");
    }
    for (std::size_t i = 0; i < mags_.magnitudes.size(); ++i) {
      mags_.magnitudes[i] = std::max(mags_.magnitudes[i], other.mags_.magnitudes[i]);
      mags_.counts[i] += other.mags_.counts[i];
    }
    for (std::size_t l = 0; l < hidden_.layers.size(); ++l) {
      LayerHiddenStats& a = hidden_.layers[l];
      const LayerHiddenStats& b = other.hidden_.layers[l];
      if (b.max_abs > a.max_abs) {
        a.max_abs = b.max_abs;
        a.median_at_max = b.median_at_max;
      }
      a.rows_seen += b.rows_seen;
    }
    if (capture_attention_ && !attn_.captured && other.attn_.captured) {
      attn_ = other.attn_;
    }
  }

 private:
  bool capture_attention_ = false;
  ExpertMagnitudeMatrix mags_;
  HiddenStatsTrace hidden_;
  AttentionCapture attn_;
};

inline TraceHooks merge(TraceHooks a, const TraceHooks& b) {
  a.merge(b);
  return a;
}

// Heatmap view: rows = layers, cols = expert slots, last column shared.
// Dense layers contribute an all-zero row.
inline Tensor2D heatmap_matrix(const TraceHooks& t) {
  const ExpertMagnitudeMatrix& m = t.magnitudes();
  Tensor2D out(m.num_layers, m.num_slots);
  for (std::size_t l = 0; l < m.num_layers; ++l) {
    for (std::size_t s = 0; s < m.num_slots; ++s) {
      out.at(l, s) = m.mag(l, s);
    }
  }
  return out;
}

}  // namespace moescope
