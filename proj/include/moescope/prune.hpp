#pragma once

// Pruning specifications. Route-exclusion removes an expert from the
// router's candidate set (next-best expert takes over); zero-output
// keeps routing fixed but zeroes the expert's contribution. Shared
// experts are always pruned by zeroing.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "moescope/model.hpp"

namespace moescope {

enum class PruneMode { kRouteExclusion, kZeroOutput };

struct PruneTarget {
  std::size_t layer = 0;
  int expert = 0;  // routed expert index, or kSharedSlot for shared
  bool operator==(const PruneTarget&) const = default;
};

struct PruneSpec {
  std::vector<PruneTarget> targets;
  PruneMode mode = PruneMode::kRouteExclusion;
  std::optional<std::uint64_t> seed;  // set for random baselines

  bool empty() const { return targets.empty(); }

  bool contains(std::size_t layer, int expert) const {
    return std::find(targets.begin(), targets.end(),
                     PruneTarget{layer, expert}) != targets.end();
  }

  // Targets must be distinct and leave >= top_k routed candidates per layer.
  void validate(const ModelConfig& cfg) const {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const PruneTarget& t = targets[i];
      if (t.layer >= cfg.num_layers) {
        throw std::invalid_argument("PruneSpec: layer out of range");
      }
      const LayerKind& lk = cfg.layers[t.layer];
      if (t.expert == kSharedSlot) {
        if (!lk.has_shared_expert) {
          throw std::invalid_argument("PruneSpec: layer has no shared expert");
        }
      } else if (t.expert < 0 ||
                 static_cast<std::size_t>(t.expert) >= lk.num_experts) {
        throw std::invalid_argument("PruneSpec: expert index out of range");
      }
      for (std::size_t j = i + 1; j < targets.size(); ++j) {
        if (targets[j] == t) {
          throw std::invalid_argument("PruneSpec: duplicate target");
        }
      }
    }
    if (mode == PruneMode::kRouteExclusion) {
      for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::size_t e = cfg.layers[l].num_experts;
        if (e == 0) continue;
        std::size_t pruned = 0;
        for (const PruneTarget& t : targets) {
          if (t.layer == l && t.expert != kSharedSlot) ++pruned;
        }
        if (e - pruned < cfg.top_k) {
          throw std::invalid_argument(
              "PruneSpec: pruning leaves fewer than top_k candidates in layer " +
              std::to_string(l));
        }
      }
    }
  }
};

}  // namespace moescope
