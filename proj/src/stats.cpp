#include "attnlab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "attnlab/error.hpp"
#include "attnlab/json_io.hpp"

namespace attnlab::stats {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct Moments {
  double mean;
  double m2;  // Σ(x−μ)²
  double m4;  // Σ(x−μ)⁴
};

Moments central_moments(const std::vector<double>& v) {
  Moments m{mean_of(v), 0.0, 0.0};
  for (double x : v) {
    const double d = x - m.mean;
    const double d2 = d * d;
    m.m2 += d2;
    m.m4 += d2 * d2;
  }
  return m;
}

void require_same_dims(const HeadGrid& a, const HeadGrid& b, const char* op) {
  if (!a.same_dims(b) || a.size() != b.size()) {
    fail(ErrorKind::compatibility, std::string(op) + ": dimensions differ (" + std::to_string(a.layers) + "x" +
                                       std::to_string(a.heads) + " vs " + std::to_string(b.layers) + "x" +
                                       std::to_string(b.heads) + ")");
  }
}

void require_nonempty(const HeadGrid& a, const char* op) {
  if (a.values.empty()) fail(ErrorKind::degenerate_input, std::string(op) + ": empty pattern");
}

}  // namespace

double gini(const HeadGrid& ap) {
  require_nonempty(ap, "gini");
  std::vector<double> x = ap.values;
  double total = 0.0;
  for (double v : x) {
    if (v < 0.0) fail(ErrorKind::domain, "gini: negative entry");
    total += v;
  }
  if (total <= 0.0) fail(ErrorKind::domain, "gini: all-zero pattern");
  // Σ_i Σ_j |x_i − x_j| = 2 Σ_k (2k − n + 1) x_(k) over ascending order.
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double weighted = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) weighted += (2.0 * static_cast<double>(k) - n + 1.0) * x[k];
  return 2.0 * weighted / (2.0 * n * total);
}

double cv(const HeadGrid& ap) {
  require_nonempty(ap, "cv");
  const auto m = central_moments(ap.values);
  if (m.mean == 0.0) fail(ErrorKind::domain, "cv: zero mean");
  return std::sqrt(m.m2 / static_cast<double>(ap.size())) / m.mean;
}

double kurtosis(const HeadGrid& ap) {
  require_nonempty(ap, "kurtosis");
  const auto m = central_moments(ap.values);
  if (m.m2 == 0.0) fail(ErrorKind::domain, "kurtosis: zero variance");
  return static_cast<double>(ap.size()) * m.m4 / (m.m2 * m.m2);
}

double correlation(const HeadGrid& a, const HeadGrid& b) {
  require_same_dims(a, b, "correlation");
  require_nonempty(a, "correlation");
  const double ma = mean_of(a.values);
  const double mb = mean_of(b.values);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.values[i] - ma;
    const double db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) fail(ErrorKind::domain, "correlation: zero variance");
  // sqrt(s·s) == s exactly, so corr(a, a) is exactly 1.
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

double mse(const HeadGrid& a, const HeadGrid& b) {
  require_same_dims(a, b, "mse");
  require_nonempty(a, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

PatternSummary summarize(const HeadGrid& ap) {
  const auto attempt = [&](double (*f)(const HeadGrid&)) -> std::optional<double> {
    try {
      return f(ap);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::domain) throw;
      return std::nullopt;
    }
  };
  return {attempt(gini), attempt(cv), attempt(kurtosis), ap.size()};
}

PatternSummary average(const std::vector<PatternSummary>& summaries) {
  if (summaries.empty()) fail(ErrorKind::degenerate_input, "average: no summaries");
  const auto avg = [&](std::optional<double> PatternSummary::*field) -> std::optional<double> {
    double s = 0.0;
    for (const auto& x : summaries) {
      if (!(x.*field)) return std::nullopt;
      s += *(x.*field);
    }
    return s / static_cast<double>(summaries.size());
  };
  return {avg(&PatternSummary::gini), avg(&PatternSummary::cv), avg(&PatternSummary::kurtosis),
          summaries.front().n_entries};
}

std::string summary_csv_row(const std::string& pattern_id, const PatternSummary& s) {
  const auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("undefined"); };
  return pattern_id + "," + cell(s.gini) + "," + cell(s.cv) + "," + cell(s.kurtosis) + "," +
         std::to_string(s.n_entries);
}

}  // namespace attnlab::stats
