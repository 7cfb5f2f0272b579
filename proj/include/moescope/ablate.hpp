#pragma once

// Pruning protocol: super-expert pruning vs seeded random baselines,
// comparing perplexity and massive-activation structure.

#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "moescope/metrics.hpp"
#include "moescope/model.hpp"
#include "moescope/profiler.hpp"
#include "moescope/prune.hpp"

namespace moescope {

inline PruneSpec prune_supers(const SuperExpertReport& report,
                              PruneMode mode = PruneMode::kRouteExclusion) {
  PruneSpec spec;
  spec.mode = mode;
  for (const ClassifiedExpert& ce : report.super_experts) {
    spec.targets.push_back({ce.layer, ce.expert});
  }
  return spec;
}

// Uniform sample of `count` distinct routed experts outside `exclude`,
// respecting the per-layer top-k feasibility constraint. Deterministic
// per seed.
inline PruneSpec random_prune_baseline(
    const MoEModel& model, std::size_t count, std::uint64_t seed,
    const std::set<std::pair<std::size_t, int>>& exclude = {}) {
  const ModelConfig& cfg = model.config;
  struct Candidate {
    std::size_t layer;
    int expert;
  };
  std::vector<Candidate> pool;
  std::vector<std::size_t> capacity(cfg.num_layers, 0);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t e = cfg.layers[l].num_experts;
    if (e == 0) continue;
    capacity[l] = e - cfg.top_k;  // how many may be route-excluded here
    if (capacity[l] == 0) continue;
    for (std::size_t i = 0; i < e; ++i) {
      if (!exclude.count({l, static_cast<int>(i)})) {
        pool.push_back({l, static_cast<int>(i)});
      }
    }
  }

  PruneSpec spec;
  spec.mode = PruneMode::kRouteExclusion;
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t picked = 0; picked < count; ++picked) {
    if (pool.empty()) {
      throw std::invalid_argument("random_prune_baseline: infeasible count");
    }
    std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
    const std::size_t idx = dist(rng);
    const Candidate c = pool[idx];
    spec.targets.push_back({c.layer, c.expert});
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
    if (--capacity[c.layer] == 0) {
      std::erase_if(pool, [&](const Candidate& x) { return x.layer == c.layer; });
    }
  }
  spec.validate(cfg);
  return spec;
}

struct AblationVariant {
  double ppl = 0.0;
  std::size_t massive_layers = 0;
};

struct AblationSummary {
  AblationVariant baseline;
  AblationVariant se_pruned;
  std::vector<AblationVariant> random_runs;
  double random_mean_ppl = 0.0;
  double se_drop_rate = 0.0;      // (pruned - baseline) / baseline
  double random_drop_rate = 0.0;  // (random mean - baseline) / baseline
};

namespace detail {

inline AblationVariant evaluate_variant(
    const MoEModel& model, const std::vector<std::vector<std::uint32_t>>& corpus,
    const PruneSpec& prune, const MassiveActivationRule& rule) {
  AblationVariant v;
  v.ppl = perplexity(model, corpus, prune);
  TraceHooks merged(model.config, false);
  for (const auto& seq : corpus) {
    TraceHooks t(model.config, false);
    model_forward(seq, model, &t, prune);
    merged.merge(t);
  }
  v.massive_layers =
      count_massive_layers(massive_activation_summary(merged.hidden_stats(), rule));
  return v;
}

}  // namespace detail

// Intact vs SE-pruned vs averaged random baselines on the same corpus.
inline AblationSummary ablation_compare(
    const MoEModel& model, const std::vector<std::vector<std::uint32_t>>& corpus,
    const SuperExpertReport& report, const std::vector<std::uint64_t>& seeds,
    const MassiveActivationRule& rule = {}, bool allow_se_overlap = false) {
  if (corpus.empty()) {
    throw std::invalid_argument("ablation_compare: empty corpus");
  }
  AblationSummary summary;
  summary.baseline = detail::evaluate_variant(model, corpus, {}, rule);

  const PruneSpec se_spec = prune_supers(report);
  summary.se_pruned = detail::evaluate_variant(model, corpus, se_spec, rule);

  std::set<std::pair<std::size_t, int>> exclude;
  if (!allow_se_overlap) {
    for (const ClassifiedExpert& ce : report.super_experts) {
      exclude.insert({ce.layer, ce.expert});
    }
  }
  double sum = 0.0;
  for (std::uint64_t seed : seeds) {
    const PruneSpec rand_spec =
        random_prune_baseline(model, se_spec.targets.size(), seed, exclude);
    AblationVariant v = detail::evaluate_variant(model, corpus, rand_spec, rule);
    sum += v.ppl;
    summary.random_runs.push_back(v);
  }
  summary.random_mean_ppl =
      seeds.empty() ? 0.0 : sum / static_cast<double>(seeds.size());
  if (summary.baseline.ppl > 0.0) {
    summary.se_drop_rate =
        (summary.se_pruned.ppl - summary.baseline.ppl) / summary.baseline.ppl;
    if (!seeds.empty()) {
      summary.random_drop_rate =
          (summary.random_mean_ppl - summary.baseline.ppl) / summary.baseline.ppl;
    }
  }
  return summary;
}

}  // namespace moescope
