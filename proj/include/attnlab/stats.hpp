#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attnlab/profiler.hpp"

namespace attnlab::stats {

// Gini over all L·H entries. Entries must be >= 0 with a positive total.
double gini(const HeadGrid& ap);
// Population standard deviation over mean.
double cv(const HeadGrid& ap);
// Non-excess kurtosis n·Σ(x−μ)⁴ / (Σ(x−μ)²)²; a Gaussian sits near 3.
double kurtosis(const HeadGrid& ap);
// Pearson correlation over row-major flattened entries.
double correlation(const HeadGrid& a, const HeadGrid& b);
double mse(const HeadGrid& a, const HeadGrid& b);

struct PatternSummary {
  // Empty when the statistic is undefined for the pattern.
  std::optional<double> gini;
  std::optional<double> cv;
  std::optional<double> kurtosis;
  std::size_t n_entries = 0;
};

PatternSummary summarize(const HeadGrid& ap);

// Field-wise mean over summaries; a field is undefined if any input is.
PatternSummary average(const std::vector<PatternSummary>& summaries);

inline constexpr const char* kSummaryCsvHeader = "pattern_id,gini,cv,kurtosis,n_entries";
std::string summary_csv_row(const std::string& pattern_id, const PatternSummary& s);

}  // namespace attnlab::stats
