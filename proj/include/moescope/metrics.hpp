#pragma once

// Outcome measures: teacher-forced perplexity, per-layer massive
// activation summaries, and the attention sink decay rate between two
// captures of the same probe input.

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "moescope/forward.hpp"
#include "moescope/model.hpp"
#include "moescope/profiler.hpp"
#include "moescope/trace.hpp"

namespace moescope {

struct SinkSpec {
  std::set<std::size_t> sink_positions = {0};
  // Query positions averaged over; empty means all t > max(sink_positions).
  std::vector<std::size_t> query_range;
};

struct HeadDecay {
  std::size_t head = 0;
  double decay = 0.0;          // 1 - mean_t ratio for this head
  double min_ratio = 1.0;      // worst retained sink mass over query positions
  std::uint64_t skipped = 0;   // query positions with zero baseline sink mass
  std::uint64_t counted = 0;
};

struct LayerSinkDecay {
  std::size_t layer = 0;
  std::vector<HeadDecay> heads;
  double d_sink = 0.0;  // 1 - mean over heads of mean-over-t ratio
};

struct SinkDecayReport {
  std::vector<LayerSinkDecay> layers;
};

// exp(mean token-level NLL) under teacher forcing, over all predicted
// positions of all sequences.
inline double perplexity(const MoEModel& model,
                         const std::vector<std::vector<std::uint32_t>>& corpus,
                         const PruneSpec& prune = {}) {
  if (corpus.empty()) {
    throw std::invalid_argument("perplexity: empty corpus");
  }
  double total_nll = 0.0;
  std::uint64_t positions = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < 2) {
      throw std::invalid_argument("perplexity: sequence shorter than 2 tokens");
    }
    DecoderState state = model_forward(seq, model, nullptr, prune);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const float* row = state.logits.row_ptr(i);
      double m = row[0];
      for (std::size_t v = 1; v < state.logits.cols(); ++v) {
        m = std::max(m, static_cast<double>(row[v]));
      }
      double lse = 0.0;
      for (std::size_t v = 0; v < state.logits.cols(); ++v) {
        lse += std::exp(static_cast<double>(row[v]) - m);
      }
      lse = m + std::log(lse);
      total_nll += lse - static_cast<double>(row[seq[i + 1]]);
      ++positions;
    }
  }
  return std::exp(total_nll / static_cast<double>(positions));
}

// D_sink per layer: 1 - (1/H) sum_h mean_t [ sum_{i in S} p'_i^t / sum_{i in S} p_i^t ].
// Query positions with zero baseline sink mass are skipped and counted.
inline SinkDecayReport attention_sink_decay(const AttentionCapture& before,
                                            const AttentionCapture& after,
                                            const SinkSpec& spec) {
  if (before.maps.size() != after.maps.size()) {
    throw std::invalid_argument("attention_sink_decay: layer count mismatch");
  }
  if (spec.sink_positions.empty()) {
    throw std::invalid_argument("attention_sink_decay: empty sink set");
  }
  const std::size_t max_sink = *spec.sink_positions.rbegin();

  SinkDecayReport report;
  std::uint64_t usable = 0;
  for (std::size_t l = 0; l < before.maps.size(); ++l) {
    if (before.maps[l].size() != after.maps[l].size()) {
      throw std::invalid_argument("attention_sink_decay: head count mismatch");
    }
    LayerSinkDecay ld;
    ld.layer = l;
    double head_ratio_sum = 0.0;
    std::size_t heads_counted = 0;
    for (std::size_t h = 0; h < before.maps[l].size(); ++h) {
      const Tensor2D& p = before.maps[l][h];
      const Tensor2D& q = after.maps[l][h];
      if (!p.same_shape(q)) {
        throw std::invalid_argument("attention_sink_decay: probe length mismatch");
      }
      HeadDecay hd;
      hd.head = h;
      double ratio_sum = 0.0;
      std::vector<std::size_t> queries = spec.query_range;
      if (queries.empty()) {
        for (std::size_t t = max_sink + 1; t < p.rows(); ++t) queries.push_back(t);
      }
      for (std::size_t t : queries) {
        if (t <= max_sink || t >= p.rows()) {
          throw std::invalid_argument(
              "attention_sink_decay: query position out of range");
        }
        double denom = 0.0, numer = 0.0;
        for (std::size_t i : spec.sink_positions) {
          denom += static_cast<double>(p.at(t, i));
          numer += static_cast<double>(q.at(t, i));
        }
        if (denom <= 0.0) {
          ++hd.skipped;
          continue;
        }
        const double r = numer / denom;
        ratio_sum += r;
        hd.min_ratio = std::min(hd.min_ratio, r);
        ++hd.counted;
      }
      if (hd.counted > 0) {
        const double mean_ratio = ratio_sum / static_cast<double>(hd.counted);
        hd.decay = 1.0 - mean_ratio;
        head_ratio_sum += mean_ratio;
        ++heads_counted;
        ++usable;
      }
      ld.heads.push_back(hd);
    }
    ld.d_sink = heads_counted > 0
                    ? 1.0 - head_ratio_sum / static_cast<double>(heads_counted)
                    : 0.0;
    report.layers.push_back(ld);
  }
  if (usable == 0) {
    throw std::invalid_argument(
        "attention_sink_decay: no baseline sink mass anywhere");
  }
  return report;
}

struct LayerMassiveSummary {
  std::size_t layer = 0;
  double max_abs = 0.0;
  double median_at_max = 0.0;
  double ratio = 0.0;
  bool is_massive = false;
};

inline std::vector<LayerMassiveSummary> massive_activation_summary(
    const HiddenStatsTrace& hidden, const MassiveActivationRule& rule) {
  if (hidden.layers.empty()) {
    throw std::invalid_argument("massive_activation_summary: empty trace");
  }
  std::vector<LayerMassiveSummary> out;
  for (std::size_t l = 0; l < hidden.layers.size(); ++l) {
    const LayerHiddenStats& st = hidden.layers[l];
    LayerMassiveSummary s;
    s.layer = l;
    s.max_abs = st.max_abs;
    s.median_at_max = st.median_at_max;
    s.ratio = st.median_at_max > 0.0f ? s.max_abs / s.median_at_max : 0.0;
    s.is_massive = s.max_abs > rule.absolute_floor &&
                   s.max_abs > rule.ratio_threshold * s.median_at_max;
    out.push_back(s);
  }
  return out;
}

inline std::size_t count_massive_layers(const std::vector<LayerMassiveSummary>& s) {
  std::size_t n = 0;
  for (const auto& l : s) {
    if (l.is_massive) ++n;
  }
  return n;
}

}  // namespace moescope
