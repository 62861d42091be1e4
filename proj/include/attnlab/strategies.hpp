#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnlab/json_io.hpp"
#include "attnlab/profiler.hpp"
#include "attnlab/regression.hpp"

namespace attnlab {

struct MixEntry {
  std::string task_id;
  double kept_alpha = 0.0;  // clamped regression coefficient
  std::int64_t count = 0;
};

struct MixPlan {
  std::int64_t total = 0;
  int top_k = 0;
  std::vector<MixEntry> entries;
};

// Keeps the top_k largest positive coefficients (negative ones clamp to 0) and
// apportions `total` instances by largest remainder, ties to the lower index.
MixPlan mix_plan(std::int64_t total, const RegressionFit& fit, int top_k);

Json mix_plan_json(const MixPlan& plan);
MixPlan mix_plan_from_json(const Json& j, const std::string& where = {});

// One singleton-probe activation pattern per candidate, in order.
std::vector<ActivationPattern> per_sample_patterns(const Model& model, const Dataset& candidates,
                                                   AttributionMode mode = AttributionMode::abs_per_instance);

struct RankedCandidate {
  std::size_t index = 0;
  std::optional<double> score;  // empty for degenerate (zero-variance) candidates
  bool degenerate = false;
};

struct SelectionResult {
  std::vector<RankedCandidate> ranked;
  std::size_t m = 0;
};

SelectionResult select_top_m(const HeadGrid& target, std::span<const HeadGrid* const> candidates, std::size_t m);

template <std::derived_from<HeadGrid> G>
SelectionResult select_top_m(const HeadGrid& target, std::span<const G> candidates, std::size_t m) {
  std::vector<const HeadGrid*> ptrs;
  ptrs.reserve(candidates.size());
  for (const auto& c : candidates) ptrs.push_back(&c);
  return select_top_m(target, std::span<const HeadGrid* const>(ptrs), m);
}

Json selection_json(const std::string& target_id, const SelectionResult& sel);

}  // namespace attnlab
