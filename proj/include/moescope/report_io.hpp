#pragma once

// JSON / CSV emission for traces, profiling reports, prune specs,
// ablation summaries, and sink decay curves. All writes go through a
// temp file + rename.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "moescope/ablate.hpp"
#include "moescope/metrics.hpp"
#include "moescope/profiler.hpp"
#include "moescope/prune.hpp"
#include "moescope/trace.hpp"

namespace moescope {

using ordered_json = nlohmann::ordered_json;

inline void write_text_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out << body;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed: " + path);
  }
}

inline ordered_json expert_to_json(const ClassifiedExpert& ce) {
  ordered_json j;
  j["layer"] = ce.layer;
  j["expert"] = ce.expert == kSharedSlot ? ordered_json("shared")
                                         : ordered_json(ce.expert);
  j["magnitude"] = ce.magnitude;
  return j;
}

inline ordered_json report_to_json(const SuperExpertReport& r) {
  ordered_json j;
  j["thresholds"]["p_top"] = r.thresholds.p_top;
  j["thresholds"]["a_max"] = r.thresholds.a_max;
  j["thresholds"]["magnitude_floor"] = r.thresholds.magnitude_floor;
  j["thresholds"]["window"] = r.thresholds.window;
  j["super_experts"] = ordered_json::array();
  for (const auto& ce : r.super_experts) j["super_experts"].push_back(expert_to_json(ce));
  j["excluded_outliers"] = ordered_json::array();
  for (const auto& ce : r.excluded_outliers) {
    j["excluded_outliers"].push_back(expert_to_json(ce));
  }
  return j;
}

inline ordered_json trace_to_json(const TraceHooks& t) {
  const ExpertMagnitudeMatrix& m = t.magnitudes();
  ordered_json j;
  j["num_layers"] = m.num_layers;
  j["num_slots"] = m.num_slots;
  j["magnitudes"] = ordered_json::array();
  j["counts"] = ordered_json::array();
  for (std::size_t l = 0; l < m.num_layers; ++l) {
    ordered_json mr = ordered_json::array();
    ordered_json cr = ordered_json::array();
    for (std::size_t s = 0; s < m.num_slots; ++s) {
      mr.push_back(m.mag(l, s));
      cr.push_back(m.count(l, s));
    }
    j["magnitudes"].push_back(mr);
    j["counts"].push_back(cr);
  }
  j["hidden"] = ordered_json::array();
  for (std::size_t l = 0; l < t.hidden_stats().layers.size(); ++l) {
    const LayerHiddenStats& st = t.hidden_stats().layers[l];
    ordered_json h;
    h["layer"] = l;
    h["max_abs"] = st.max_abs;
    h["median_at_max"] = st.median_at_max;
    h["rows_seen"] = st.rows_seen;
    j["hidden"].push_back(h);
  }
  return j;
}

// Heatmap CSV: rows = layers, cols = experts, final column = shared slot.
inline std::string heatmap_csv(const TraceHooks& t) {
  const Tensor2D m = heatmap_matrix(t);
  std::ostringstream out;
  out << "layer";
  for (std::size_t s = 0; s + 1 < m.cols(); ++s) out << ",expert_" << s;
  out << ",shared\n";
  for (std::size_t l = 0; l < m.rows(); ++l) {
    out << l;
    for (std::size_t s = 0; s < m.cols(); ++s) out << ',' << m.at(l, s);
    out << '\n';
  }
  return out.str();
}

inline ordered_json prune_spec_to_json(const PruneSpec& spec) {
  ordered_json j;
  j["mode"] = spec.mode == PruneMode::kRouteExclusion ? "route-exclusion"
                                                      : "zero-output";
  if (spec.seed) j["seed"] = *spec.seed;
  j["targets"] = ordered_json::array();
  for (const PruneTarget& t : spec.targets) {
    ordered_json tj;
    tj["layer"] = t.layer;
    tj["expert"] =
        t.expert == kSharedSlot ? ordered_json("shared") : ordered_json(t.expert);
    j["targets"].push_back(tj);
  }
  return j;
}

inline PruneSpec prune_spec_from_json(const ordered_json& j) {
  PruneSpec spec;
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "route-exclusion") {
    spec.mode = PruneMode::kRouteExclusion;
  } else if (mode == "zero-output") {
    spec.mode = PruneMode::kZeroOutput;
  } else {
    throw std::runtime_error("prune spec: unknown mode " + mode);
  }
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& tj : j.at("targets")) {
    PruneTarget t;
    t.layer = tj.at("layer").get<std::size_t>();
    const auto& e = tj.at("expert");
    t.expert = e.is_string() ? kSharedSlot : e.get<int>();
    spec.targets.push_back(t);
  }
  return spec;
}

inline ordered_json ablation_to_json(const AblationSummary& s) {
  ordered_json j;
  j["baseline"]["ppl"] = s.baseline.ppl;
  j["baseline"]["massive_layers"] = s.baseline.massive_layers;
  j["se_pruned"]["ppl"] = s.se_pruned.ppl;
  j["se_pruned"]["massive_layers"] = s.se_pruned.massive_layers;
  j["random_runs"] = ordered_json::array();
  for (const AblationVariant& v : s.random_runs) {
    ordered_json r;
    r["ppl"] = v.ppl;
    r["massive_layers"] = v.massive_layers;
    j["random_runs"].push_back(r);
  }
  j["random_mean_ppl"] = s.random_mean_ppl;
  j["se_drop_rate"] = s.se_drop_rate;
  j["random_drop_rate"] = s.random_drop_rate;
  return j;
}

// Per-(layer, head) decay CSV.
inline std::string sink_decay_csv(const SinkDecayReport& r) {
  std::ostringstream out;
  out << "layer,head,decay,min_ratio,skipped\n";
  for (const LayerSinkDecay& l : r.layers) {
    for (const HeadDecay& h : l.heads) {
      out << l.layer << ',' << h.head << ',' << h.decay << ',' << h.min_ratio
          << ',' << h.skipped << '\n';
    }
  }
  return out.str();
}

// One D_sink value per layer, the layer-curve view.
inline std::string sink_curve_csv(const SinkDecayReport& r) {
  std::ostringstream out;
  out << "layer,d_sink\n";
  for (const LayerSinkDecay& l : r.layers) {
    out << l.layer << ',' << l.d_sink << '\n';
  }
  return out.str();
}

inline std::string massive_summary_csv(const std::vector<LayerMassiveSummary>& s) {
  std::ostringstream out;
  out << "layer,max_abs,median_at_max,ratio,is_massive\n";
  for (const LayerMassiveSummary& l : s) {
    out << l.layer << ',' << l.max_abs << ',' << l.median_at_max << ','
        << l.ratio << ',' << (l.is_massive ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace moescope
