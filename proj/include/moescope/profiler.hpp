#pragma once

// Super-expert classification: locate the layer window where massive
// activations form, then gate each expert's peak down_proj magnitude on
// the top-percentile threshold, the a_max/10 floor, and window
// membership. Experts passing the magnitude gates outside the window
// are reported separately as outlier experts.

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "moescope/forward.hpp"
#include "moescope/model.hpp"
#include "moescope/trace.hpp"

namespace moescope {

struct MassiveActivationRule {
  double ratio_threshold = 100.0;  // max/median ratio marking a row massive
  double absolute_floor = 5.0;
  double plateau_fraction = 0.9;   // window closes once m_l >= fraction * m*
};

struct SEThresholds {
  double p_top = 0.0;            // nearest-rank top-fraction of all a_{l,e}
  double a_max = 0.0;
  double magnitude_floor = 0.0;  // a_max / floor_divisor
  std::set<std::size_t> window;
};

struct ClassifiedExpert {
  std::size_t layer = 0;
  int expert = 0;  // kSharedSlot for a shared expert
  double magnitude = 0.0;
};

struct SuperExpertReport {
  SEThresholds thresholds;
  std::vector<ClassifiedExpert> super_experts;      // sorted by magnitude desc
  std::vector<ClassifiedExpert> excluded_outliers;  // magnitude gates pass, layer gate fails
};

// The contiguous run of layers where massive activations form: from the
// first layer whose max/median ratio and absolute magnitude qualify, up
// to the earliest layer reaching plateau_fraction of the global max.
inline std::set<std::size_t> detect_formation_window(
    const HiddenStatsTrace& hidden, const MassiveActivationRule& rule) {
  const std::size_t num_layers = hidden.layers.size();
  std::vector<bool> massive(num_layers, false);
  double m_star = 0.0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerHiddenStats& st = hidden.layers[l];
    m_star = std::max(m_star, static_cast<double>(st.max_abs));
    const double med = static_cast<double>(st.median_at_max);
    massive[l] = st.max_abs > rule.absolute_floor &&
                 static_cast<double>(st.max_abs) > rule.ratio_threshold * med;
  }
  std::size_t first = num_layers;
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (massive[l]) {
      first = l;
      break;
    }
  }
  if (first == num_layers) return {};
  std::size_t plateau = first;
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (static_cast<double>(hidden.layers[l].max_abs) >=
        rule.plateau_fraction * m_star) {
      plateau = std::max(first, l);
      break;
    }
  }
  std::set<std::size_t> window;
  for (std::size_t l = first; l <= plateau; ++l) window.insert(l);
  return window;
}

inline SuperExpertReport classify_super_experts(
    const ExpertMagnitudeMatrix& mags, const std::set<std::size_t>& window,
    double fraction = 0.005, double floor_divisor = 10.0) {
  std::vector<double> all;
  all.reserve(mags.magnitudes.size());
  for (float v : mags.magnitudes) all.push_back(static_cast<double>(v));
  if (all.empty()) {
    throw std::invalid_argument("classify_super_experts: empty magnitude matrix");
  }

  SuperExpertReport report;
  report.thresholds.a_max = *std::max_element(all.begin(), all.end());
  report.thresholds.p_top = nearest_rank_top_fraction(all, fraction);
  report.thresholds.magnitude_floor = report.thresholds.a_max / floor_divisor;
  report.thresholds.window = window;

  for (std::size_t l = 0; l < mags.num_layers; ++l) {
    for (std::size_t s = 0; s < mags.num_slots; ++s) {
      const double a = static_cast<double>(mags.mag(l, s));
      if (a < report.thresholds.p_top || a < report.thresholds.magnitude_floor) {
        continue;
      }
      ClassifiedExpert ce;
      ce.layer = l;
      ce.expert = s + 1 == mags.num_slots ? kSharedSlot : static_cast<int>(s);
      ce.magnitude = a;
      if (window.count(l)) {
        report.super_experts.push_back(ce);
      } else {
        report.excluded_outliers.push_back(ce);
      }
    }
  }
  auto by_mag = [](const ClassifiedExpert& a, const ClassifiedExpert& b) {
    return a.magnitude > b.magnitude;
  };
  std::stable_sort(report.super_experts.begin(), report.super_experts.end(), by_mag);
  std::stable_sort(report.excluded_outliers.begin(), report.excluded_outliers.end(),
                   by_mag);
  return report;
}

// Traced forward passes over the corpus, merged, then window detection
// and classification.
inline SuperExpertReport profile(
    const MoEModel& model, const std::vector<std::vector<std::uint32_t>>& corpus,
    const MassiveActivationRule& rule = {}, double fraction = 0.005,
    double floor_divisor = 10.0, const PruneSpec& prune = {}) {
  if (corpus.empty()) {
    throw std::invalid_argument("profile: empty corpus");
  }
  TraceHooks merged(model.config, /*capture_attention=*/false);
  for (const auto& seq : corpus) {
    TraceHooks t(model.config, false);
    model_forward(seq, model, &t, prune);
    merged.merge(t);
  }
  const std::set<std::size_t> window =
      detect_formation_window(merged.hidden_stats(), rule);
  return classify_super_experts(merged.magnitudes(), window, fraction,
                                floor_divisor);
}

}  // namespace moescope
