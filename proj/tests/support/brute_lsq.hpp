#pragma once
// Exhaustive two-parameter least squares: evaluate the residual on a square
// grid, keep the points whose residual is within `slack` of the best grid
// value, and return the one of smallest norm.

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace brute {

inline std::pair<double, double> min_norm_lsq(const std::vector<double>& x1, const std::vector<double>& x2,
                                              const std::vector<double>& y, double lo, double hi, double step,
                                              double slack) {
  const auto n_steps = static_cast<long>(std::llround((hi - lo) / step));
  // SSE(a, b) expanded into Gram terms so each grid point is O(1).
  double s11 = 0, s22 = 0, s12 = 0, s1y = 0, s2y = 0, syy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s11 += x1[i] * x1[i];
    s22 += x2[i] * x2[i];
    s12 += x1[i] * x2[i];
    s1y += x1[i] * y[i];
    s2y += x2[i] * y[i];
    syy += y[i] * y[i];
  }
  auto sse = [&](double a, double b) {
    return syy - 2 * a * s1y - 2 * b * s2y + a * a * s11 + 2 * a * b * s12 + b * b * s22;
  };
  double best = std::numeric_limits<double>::infinity();
  for (long i = 0; i <= n_steps; ++i)
    for (long j = 0; j <= n_steps; ++j) best = std::min(best, sse(lo + i * step, lo + j * step));
  std::pair<double, double> arg{0, 0};
  double arg_norm = std::numeric_limits<double>::infinity();
  for (long i = 0; i <= n_steps; ++i) {
    for (long j = 0; j <= n_steps; ++j) {
      const double a = lo + i * step, b = lo + j * step;
      if (sse(a, b) > best + slack) continue;
      const double nn = a * a + b * b;
      if (nn < arg_norm) {
        arg_norm = nn;
        arg = {a, b};
      }
    }
  }
  return arg;
}

}  // namespace brute
