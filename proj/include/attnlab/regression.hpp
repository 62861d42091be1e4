#pragma once

#include <string>
#include <vector>

#include "attnlab/json_io.hpp"
#include "attnlab/profiler.hpp"

namespace attnlab {

struct LabeledGrid {
  std::string label;
  HeadGrid grid;
};

struct RegressionFit {
  std::vector<double> alphas;
  double r_squared = 0.0;
  double residual_norm = 0.0;
  std::vector<std::string> basic_task_ids;
};

// Column-pivot rank cutoff relative to the largest column norm.
inline constexpr double kRankTolerance = 1e-10;

// Least squares without intercept: dep ≈ Σ α_i · indep_i over flattened
// row-major entries. Rank-deficient designs get the minimum-norm α.
RegressionFit fit(const HeadGrid& dep, const std::vector<LabeledGrid>& indeps);

// Σ α_i · indep_i
HeadGrid predict(const std::vector<LabeledGrid>& indeps, const std::vector<double>& alphas);

// 1 − SSE/SST with SST about the mean of dep. May be negative.
double r_squared(const HeadGrid& dep, const HeadGrid& predicted);

struct ScanRow {
  std::vector<std::string> subset;
  RegressionFit fit;
};

// Fits every size-k subset (in candidate order), ranked by R² descending;
// equal R² falls back to lexicographic label order.
std::vector<ScanRow> combo_scan(const HeadGrid& dep, const std::vector<LabeledGrid>& candidates, int k);

Json fit_json(const RegressionFit& f);
RegressionFit fit_from_json(const Json& j, const std::string& where = {});
Json scan_report_json(const std::string& dependent_id, const std::vector<ScanRow>& rows);

}  // namespace attnlab
