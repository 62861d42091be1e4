#include "attnlab/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnlab/error.hpp"
#include "attnlab/stats.hpp"

namespace attnlab {

MixPlan mix_plan(std::int64_t total, const RegressionFit& fit, int top_k) {
  if (total < 1) fail(ErrorKind::parameter, "mix_plan: N must be >= 1");
  const int n = static_cast<int>(fit.alphas.size());
  if (top_k < 1 || top_k > n) {
    fail(ErrorKind::parameter, "mix_plan: top_k = " + std::to_string(top_k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<double> clamped(fit.alphas.size());
  std::transform(fit.alphas.begin(), fit.alphas.end(), clamped.begin(), [](double a) { return std::max(a, 0.0); });

  std::vector<std::size_t> order(clamped.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return clamped[a] > clamped[b]; });
  std::vector<std::size_t> kept;
  for (int i = 0; i < top_k; ++i) {
    if (clamped[order[static_cast<std::size_t>(i)]] > 0.0) kept.push_back(order[static_cast<std::size_t>(i)]);
  }
  if (kept.empty()) fail(ErrorKind::domain, "mix_plan: no positive regression coefficient, no usable basic task");
  std::sort(kept.begin(), kept.end());

  double weight_sum = 0.0;
  for (auto i : kept) weight_sum += clamped[i];

  MixPlan plan;
  plan.total = total;
  plan.top_k = top_k;
  std::vector<double> remainders;
  std::int64_t assigned = 0;
  for (auto i : kept) {
    const double quota = static_cast<double>(total) * clamped[i] / weight_sum;
    const auto base = static_cast<std::int64_t>(std::floor(quota));
    const std::string id = i < fit.basic_task_ids.size() ? fit.basic_task_ids[i] : "task" + std::to_string(i);
    plan.entries.push_back({id, clamped[i], base});
    remainders.push_back(quota - static_cast<double>(base));
    assigned += base;
  }
  std::vector<std::size_t> by_remainder(kept.size());
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  // Floating-point quotas can under-count by more than the entry count only
  // in pathological cases; cycle until the identity holds.
  for (std::size_t r = 0; assigned < total; r = (r + 1) % by_remainder.size()) {
    ++plan.entries[by_remainder[r]].count;
    ++assigned;
  }
  for (std::size_t r = by_remainder.size(); assigned > total;) {
    r = (r == 0 ? by_remainder.size() : r) - 1;
    auto& e = plan.entries[by_remainder[r]];
    if (e.count > 0) {
      --e.count;
      --assigned;
    }
  }
  return plan;
}

Json mix_plan_json(const MixPlan& plan) {
  Json entries = Json::array();
  for (const auto& e : plan.entries) {
    entries.push_back(Json{{"task_id", e.task_id}, {"kept_alpha", e.kept_alpha}, {"count", e.count}});
  }
  return Json{{"N", plan.total}, {"top_k", plan.top_k}, {"entries", std::move(entries)}};
}

MixPlan mix_plan_from_json(const Json& j, const std::string& where) {
  MixPlan plan;
  try {
    plan.total = j.at("N").get<std::int64_t>();
    plan.top_k = j.at("top_k").get<int>();
    for (const auto& e : j.at("entries")) {
      plan.entries.push_back(
          {e.at("task_id").get<std::string>(), e.at("kept_alpha").get<double>(), e.at("count").get<std::int64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("mix plan: ") + e.what(), where);
  }
  std::int64_t sum = 0;
  for (const auto& e : plan.entries) {
    if (e.count < 0) fail(ErrorKind::format, "mix plan: negative count", where);
    sum += e.count;
  }
  if (sum != plan.total) fail(ErrorKind::format, "mix plan: counts do not sum to N", where);
  return plan;
}

std::vector<ActivationPattern> per_sample_patterns(const Model& model, const Dataset& candidates,
                                                   AttributionMode mode) {
  if (candidates.empty()) fail(ErrorKind::degenerate_input, "per_sample_patterns: no candidates");
  std::vector<ActivationPattern> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Dataset single;
    single.id = candidates.id + "#" + std::to_string(i);
    single.instances.push_back(candidates.instances[i]);
    out.push_back(activation_pattern(model, single, mode));
  }
  return out;
}

SelectionResult select_top_m(const HeadGrid& target, std::span<const HeadGrid* const> candidates, std::size_t m) {
  if (m < 1 || m > candidates.size()) {
    fail(ErrorKind::parameter,
         "select_top_m: m = " + std::to_string(m) + " outside [1, " + std::to_string(candidates.size()) + "]");
  }
  std::vector<RankedCandidate> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i]->same_dims(target)) {
      fail(ErrorKind::compatibility, "select_top_m: candidate " + std::to_string(i) + " dimensions differ from target");
    }
    RankedCandidate r{i, std::nullopt, false};
    try {
      r.score = stats::correlation(target, *candidates[i]);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::domain) throw;
      r.degenerate = true;
    }
    all.push_back(r);
  }
  std::stable_sort(all.begin(), all.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.degenerate != b.degenerate) return !a.degenerate;
    if (a.degenerate) return false;
    return *a.score > *b.score;
  });
  all.resize(m);
  return {std::move(all), m};
}

Json selection_json(const std::string& target_id, const SelectionResult& sel) {
  Json ranked = Json::array();
  for (const auto& r : sel.ranked) {
    ranked.push_back(Json{{"index", r.index}, {"score", r.score ? Json(*r.score) : Json(nullptr)}, {"degenerate", r.degenerate}});
  }
  return Json{{"target_id", target_id}, {"m", sel.m}, {"ranked", std::move(ranked)}};
}

}  // namespace attnlab
