#pragma once
// Direct transcriptions of the statistic definitions: double loops, no
// sorting tricks, no shared helpers with the library.

#include <cmath>
#include <cstddef>
#include <vector>

namespace naive {

inline double gini(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double pairs = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += x[i];
    for (std::size_t j = 0; j < n; ++j) pairs += std::abs(x[i] - x[j]);
  }
  return pairs / (2.0 * static_cast<double>(n) * total);
}

inline double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double cv(const std::vector<double>& x) {
  const double mu = mean(x);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu) / static_cast<double>(x.size());
  return std::sqrt(var) / mu;
}

inline double kurtosis(const std::vector<double>& x) {
  const double mu = mean(x);
  double num = 0.0, den = 0.0;
  for (double v : x) {
    num += std::pow(v - mu, 4);
    den += std::pow(v - mu, 2);
  }
  return static_cast<double>(x.size()) * num / (den * den);
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / (std::sqrt(va) * std::sqrt(vb));
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace naive
