#include "attnlab/regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "attnlab/error.hpp"

namespace attnlab {

namespace {

void check_compatible(const HeadGrid& dep, const std::vector<LabeledGrid>& indeps) {
  if (indeps.empty()) fail(ErrorKind::parameter, "fit: needs at least one independent delta");
  for (const auto& x : indeps) {
    if (!x.grid.same_dims(dep) || x.grid.size() != dep.size()) {
      fail(ErrorKind::compatibility, "fit: independent '" + x.label + "' has dimensions " +
                                         std::to_string(x.grid.layers) + "x" + std::to_string(x.grid.heads) +
                                         ", dependent has " + std::to_string(dep.layers) + "x" +
                                         std::to_string(dep.heads));
    }
  }
  if (dep.size() < indeps.size()) {
    fail(ErrorKind::parameter, "fit: " + std::to_string(indeps.size()) + " independents exceed " +
                                   std::to_string(dep.size()) + " observations");
  }
}

}  // namespace

double r_squared(const HeadGrid& dep, const HeadGrid& predicted) {
  if (!dep.same_dims(predicted) || dep.size() != predicted.size()) {
    fail(ErrorKind::compatibility, "r_squared: dimension mismatch");
  }
  double mean = 0.0;
  for (double y : dep.values) mean += y;
  mean /= static_cast<double>(dep.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < dep.size(); ++i) {
    const double e = dep.values[i] - predicted.values[i];
    const double c = dep.values[i] - mean;
    sse += e * e;
    sst += c * c;
  }
  if (sst == 0.0) fail(ErrorKind::domain, "r_squared: dependent has zero variance about its mean");
  return 1.0 - sse / sst;
}

HeadGrid predict(const std::vector<LabeledGrid>& indeps, const std::vector<double>& alphas) {
  if (indeps.empty() || indeps.size() != alphas.size()) {
    fail(ErrorKind::dimension, "predict: alphas do not match independents");
  }
  HeadGrid out = indeps.front().grid;
  std::fill(out.values.begin(), out.values.end(), 0.0);
  for (std::size_t j = 0; j < indeps.size(); ++j)
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += alphas[j] * indeps[j].grid.values[i];
  return out;
}

RegressionFit fit(const HeadGrid& dep, const std::vector<LabeledGrid>& indeps) {
  check_compatible(dep, indeps);
  const auto n = static_cast<Eigen::Index>(dep.size());
  const auto p = static_cast<Eigen::Index>(indeps.size());
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = dep.values[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = indeps[static_cast<std::size_t>(j)].grid.values[static_cast<std::size_t>(i)];
  }
  // Validates the dependent before solving.
  double mean = y.mean();
  if ((y.array() - mean).square().sum() == 0.0) fail(ErrorKind::domain, "fit: dependent delta has zero variance");

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(kRankTolerance);
  cod.compute(x);
  const Eigen::VectorXd a = cod.solve(y);

  RegressionFit f;
  f.alphas.assign(a.data(), a.data() + a.size());
  for (const auto& g : indeps) f.basic_task_ids.push_back(g.label);
  const HeadGrid pred = predict(indeps, f.alphas);
  f.r_squared = r_squared(dep, pred);
  double rss = 0.0;
  for (std::size_t i = 0; i < dep.size(); ++i) rss += (dep.values[i] - pred.values[i]) * (dep.values[i] - pred.values[i]);
  f.residual_norm = std::sqrt(rss);
  return f;
}

std::vector<ScanRow> combo_scan(const HeadGrid& dep, const std::vector<LabeledGrid>& candidates, int k) {
  const int n = static_cast<int>(candidates.size());
  if (k < 1 || k > n) {
    fail(ErrorKind::parameter, "combo_scan: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<ScanRow> rows;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    std::vector<LabeledGrid> subset;
    ScanRow row;
    for (int i : idx) {
      subset.push_back(candidates[static_cast<std::size_t>(i)]);
      row.subset.push_back(candidates[static_cast<std::size_t>(i)].label);
    }
    row.fit = fit(dep, subset);
    rows.push_back(std::move(row));
    // next combination in lexicographic index order
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int i = pos + 1; i < k; ++i) idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ScanRow& a, const ScanRow& b) {
    if (a.fit.r_squared != b.fit.r_squared) return a.fit.r_squared > b.fit.r_squared;
    return a.subset < b.subset;
  });
  return rows;
}

Json fit_json(const RegressionFit& f) {
  return Json{{"basic_task_ids", f.basic_task_ids},
              {"alphas", f.alphas},
              {"r_squared", f.r_squared},
              {"residual_norm", f.residual_norm}};
}

RegressionFit fit_from_json(const Json& j, const std::string& where) {
  RegressionFit f;
  try {
    f.basic_task_ids = j.at("basic_task_ids").get<std::vector<std::string>>();
    f.alphas = j.at("alphas").get<std::vector<double>>();
    f.r_squared = j.at("r_squared").get<double>();
    f.residual_norm = j.at("residual_norm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("fit report: ") + e.what(), where);
  }
  if (f.alphas.size() != f.basic_task_ids.size()) {
    fail(ErrorKind::format, "fit report: alphas and basic_task_ids differ in length", where);
  }
  return f;
}

Json scan_report_json(const std::string& dependent_id, const std::vector<ScanRow>& rows) {
  Json out{{"dependent_id", dependent_id}, {"rows", Json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back(Json{{"subset", r.subset},
                               {"alphas", r.fit.alphas},
                               {"r_squared", r.fit.r_squared},
                               {"residual_norm", r.fit.residual_norm}});
  }
  return out;
}

}  // namespace attnlab
