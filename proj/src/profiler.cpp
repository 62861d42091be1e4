#include "attnlab/profiler.hpp"

#include <cmath>

#include "attnlab/error.hpp"
#include "attnlab/exact_sum.hpp"

namespace attnlab {

HeadGrid::HeadGrid(int l, int h, std::vector<double> v) : layers(l), heads(h), values(std::move(v)) {
  if (l < 1 || h < 1 || values.size() != static_cast<std::size_t>(l * h)) {
    fail(ErrorKind::dimension, "head grid " + std::to_string(l) + "x" + std::to_string(h) + " given " +
                                   std::to_string(values.size()) + " values");
  }
}

std::string_view mode_name(AttributionMode m) {
  switch (m) {
    case AttributionMode::abs_per_instance: return "abs_per_instance";
    case AttributionMode::signed_sum: return "signed";
    case AttributionMode::abs_of_mean: return "abs_of_mean";
  }
  return "?";
}

AttributionMode parse_mode(const std::string& s) {
  if (s == "abs_per_instance") return AttributionMode::abs_per_instance;
  if (s == "signed") return AttributionMode::signed_sum;
  if (s == "abs_of_mean") return AttributionMode::abs_of_mean;
  fail(ErrorKind::config, "unknown attribution mode '" + s + "' (abs_per_instance|signed|abs_of_mean)");
}

std::string_view delta_mode_name(DeltaMode m) { return m == DeltaMode::absolute ? "absolute" : "relative"; }

DeltaMode parse_delta_mode(const std::string& s) {
  if (s == "absolute") return DeltaMode::absolute;
  if (s == "relative") return DeltaMode::relative;
  fail(ErrorKind::config, "unknown delta mode '" + s + "' (absolute|relative)");
}

double head_attribution(const AttentionCapture& capture, AttributionMode mode) {
  if (!capture.grad_ready || !capture.attn.defined()) {
    fail(ErrorKind::state, "capture (" + std::to_string(capture.layer) + "," + std::to_string(capture.head) +
                               ") has no gradient; run backward first");
  }
  const auto attn = std::as_const(capture.attn).value();
  const auto grad = capture.attn_grad();
  double s = 0.0;
  for (std::size_t i = 0; i < attn.size(); ++i) s += attn[i] * grad[i];
  return mode == AttributionMode::abs_per_instance ? std::abs(s) : s;
}

std::vector<double> instance_attributions(const Model& frozen, const Instance& inst) {
  if (inst.tokens.size() < 2 || inst.loss_mask.size() != inst.tokens.size()) {
    fail(ErrorKind::input, "instance needs >= 2 tokens and a matching mask");
  }
  const std::span<const int> tokens(inst.tokens);
  const std::vector<bool> mask(inst.loss_mask.begin() + 1, inst.loss_mask.end());
  ad::Graph g;
  auto fwd = forward_capture(g, frozen, tokens.first(tokens.size() - 1));
  auto loss = ad::cross_entropy_masked(g, fwd.logits, tokens.subspan(1), mask);
  g.backward(loss);
  for (auto& c : fwd.captures) c.grad_ready = true;
  std::vector<double> out;
  out.reserve(fwd.captures.size());
  for (const auto& c : fwd.captures) out.push_back(head_attribution(c, AttributionMode::signed_sum));
  return out;
}

ActivationPattern activation_pattern(const Model& model, const Dataset& probe, AttributionMode mode,
                                     const std::string& model_ref) {
  if (probe.empty()) fail(ErrorKind::degenerate_input, "activation pattern needs a nonempty probe set");
  Model frozen = model.clone();
  frozen.set_requires_grad(false);
  const auto& cfg = model.config();
  const auto cells = static_cast<std::size_t>(cfg.n_layers * cfg.n_heads);
  std::vector<ExactSum> sums(cells);
  for (const auto& inst : probe.instances) {
    const auto a = instance_attributions(frozen, inst);
    for (std::size_t c = 0; c < cells; ++c) sums[c].add(mode == AttributionMode::abs_per_instance ? std::abs(a[c]) : a[c]);
  }
  const auto n = static_cast<double>(probe.size());
  std::vector<double> values(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    values[c] = sums[c].result() / n;
    if (mode == AttributionMode::abs_of_mean) values[c] = std::abs(values[c]);
  }
  ActivationPattern ap;
  static_cast<HeadGrid&>(ap) = HeadGrid(cfg.n_layers, cfg.n_heads, std::move(values));
  ap.meta.model_ref = model_ref.empty() ? "step" + std::to_string(model.step()) : model_ref;
  ap.meta.probe_id = probe.id;
  ap.meta.n_instances = probe.size();
  ap.meta.mode = mode;
  return ap;
}

ActivationDelta delta(const ActivationPattern& after, const ActivationPattern& before, DeltaMode mode) {
  if (!after.same_dims(before)) {
    fail(ErrorKind::compatibility, "delta: pattern dimensions differ (" + std::to_string(after.layers) + "x" +
                                       std::to_string(after.heads) + " vs " + std::to_string(before.layers) + "x" +
                                       std::to_string(before.heads) + ")");
  }
  if (after.meta.probe_id != before.meta.probe_id) {
    fail(ErrorKind::compatibility,
         "delta: patterns were measured on different probes ('" + after.meta.probe_id + "' vs '" + before.meta.probe_id + "')");
  }
  std::vector<double> v(after.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double diff = after.values[i] - before.values[i];
    v[i] = mode == DeltaMode::absolute ? diff : diff / (std::abs(before.values[i]) + kRelativeDeltaEps);
  }
  ActivationDelta d;
  static_cast<HeadGrid&>(d) = HeadGrid(after.layers, after.heads, std::move(v));
  d.mode = mode;
  d.probe_id = after.meta.probe_id;
  d.before_ref = before.meta.model_ref;
  d.after_ref = after.meta.model_ref;
  return d;
}

namespace {

Json rows_json(const HeadGrid& g) {
  Json rows = Json::array();
  for (int l = 0; l < g.layers; ++l) {
    Json row = Json::array();
    for (int h = 0; h < g.heads; ++h) row.push_back(g.at(l, h));
    rows.push_back(std::move(row));
  }
  return rows;
}

HeadGrid grid_from_json(const Json& j, const std::string& where) {
  const int layers = j.at("layers").get<int>();
  const int heads = j.at("heads").get<int>();
  if (layers < 1 || heads < 1) fail(ErrorKind::format, "layers and heads must be >= 1", where);
  const Json& rows = j.at("values");
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(layers)) {
    fail(ErrorKind::format, "values has " + std::to_string(rows.is_array() ? rows.size() : 0) +
                                " rows, declared layers = " + std::to_string(layers), where);
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(layers * heads));
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(heads)) {
      fail(ErrorKind::format, "a values row does not have " + std::to_string(heads) + " columns", where);
    }
    for (const auto& x : row) {
      if (!x.is_number()) fail(ErrorKind::format, "values must be numbers", where);
      v.push_back(x.get<double>());
    }
  }
  return HeadGrid(layers, heads, std::move(v));
}

template <typename F>
auto guarded(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("schema violation: ") + e.what(), where);
  }
}

}  // namespace

Json pattern_json(const ActivationPattern& ap) {
  return Json{{"format_version", kPatternFormatVersion},
              {"layers", ap.layers},
              {"heads", ap.heads},
              {"n_instances", ap.meta.n_instances},
              {"attribution_mode", mode_name(ap.meta.mode)},
              {"probe_id", ap.meta.probe_id},
              {"model_ref", ap.meta.model_ref},
              {"values", rows_json(ap)}};
}

ActivationPattern pattern_from_json(const Json& j, const std::string& where) {
  return guarded(where, [&] {
    if (j.at("format_version").get<int>() != kPatternFormatVersion) {
      fail(ErrorKind::format, "unsupported pattern format_version", where);
    }
    ActivationPattern ap;
    static_cast<HeadGrid&>(ap) = grid_from_json(j, where);
    ap.meta.n_instances = j.at("n_instances").get<std::size_t>();
    ap.meta.mode = parse_mode(j.at("attribution_mode").get<std::string>());
    ap.meta.probe_id = j.at("probe_id").get<std::string>();
    ap.meta.model_ref = j.at("model_ref").get<std::string>();
    if (ap.meta.mode != AttributionMode::signed_sum) {
      for (double x : ap.values) {
        if (x < 0.0) fail(ErrorKind::format, "negative activation level under an absolute attribution mode", where);
      }
    }
    return ap;
  });
}

void export_pattern(const ActivationPattern& ap, const std::filesystem::path& path) {
  write_text(path, dump_json(pattern_json(ap), true));
}

ActivationPattern import_pattern(const std::filesystem::path& path) {
  return pattern_from_json(read_json(path), path.string());
}

Json delta_json(const ActivationDelta& d) {
  return Json{{"format_version", kPatternFormatVersion},
              {"kind", "delta"},
              {"layers", d.layers},
              {"heads", d.heads},
              {"mode", delta_mode_name(d.mode)},
              {"probe_id", d.probe_id},
              {"before_ref", d.before_ref},
              {"after_ref", d.after_ref},
              {"values", rows_json(d)}};
}

void export_delta(const ActivationDelta& d, const std::filesystem::path& path) {
  write_text(path, dump_json(delta_json(d), true));
}

ActivationDelta import_delta(const std::filesystem::path& path) {
  const std::string where = path.string();
  const Json j = read_json(path);
  if (j.is_object() && j.value("kind", std::string()) == "delta") {
    return guarded(where, [&] {
      ActivationDelta d;
      static_cast<HeadGrid&>(d) = grid_from_json(j, where);
      d.mode = parse_delta_mode(j.at("mode").get<std::string>());
      d.probe_id = j.value("probe_id", std::string());
      d.before_ref = j.value("before_ref", std::string());
      d.after_ref = j.value("after_ref", std::string());
      return d;
    });
  }
  const auto ap = pattern_from_json(j, where);
  ActivationDelta d;
  static_cast<HeadGrid&>(d) = ap;
  d.probe_id = ap.meta.probe_id;
  d.after_ref = ap.meta.model_ref;
  return d;
}

}  // namespace attnlab
