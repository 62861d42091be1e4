#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "attnlab/json_io.hpp"
#include "attnlab/model.hpp"
#include "attnlab/tasks.hpp"

namespace attnlab {

// L×H grid of per-head values, row-major (layer-major, head-minor).
struct HeadGrid {
  int layers = 0;
  int heads = 0;
  std::vector<double> values;

  HeadGrid() = default;
  HeadGrid(int l, int h, std::vector<double> v);
  double at(int l, int h) const { return values[static_cast<std::size_t>(l * heads + h)]; }
  std::size_t size() const { return values.size(); }
  bool same_dims(const HeadGrid& o) const { return layers == o.layers && heads == o.heads; }
};

enum class AttributionMode { abs_per_instance, signed_sum, abs_of_mean };

std::string_view mode_name(AttributionMode m);
AttributionMode parse_mode(const std::string& s);

struct PatternMeta {
  std::string model_ref;
  std::string probe_id;
  std::size_t n_instances = 0;
  AttributionMode mode = AttributionMode::abs_per_instance;
};

struct ActivationPattern : HeadGrid {
  PatternMeta meta;
};

enum class DeltaMode { absolute, relative };

std::string_view delta_mode_name(DeltaMode m);
DeltaMode parse_delta_mode(const std::string& s);

struct ActivationDelta : HeadGrid {
  DeltaMode mode = DeltaMode::absolute;
  std::string probe_id;
  std::string before_ref;
  std::string after_ref;
};

inline constexpr double kRelativeDeltaEps = 1e-12;
inline constexpr int kPatternFormatVersion = 1;

// Frobenius inner product ⟨Γ, ∂L/∂Γ⟩, absolute under abs_per_instance.
// Throws a state error when the capture carries no gradient.
double head_attribution(const AttentionCapture& capture, AttributionMode mode);

// Per-instance L×H attribution matrices (signed) for one probe instance.
std::vector<double> instance_attributions(const Model& frozen, const Instance& inst);

// Mean over the probe in canonical instance order. The model is not touched:
// attribution runs on a frozen copy.
ActivationPattern activation_pattern(const Model& model, const Dataset& probe,
                                     AttributionMode mode = AttributionMode::abs_per_instance,
                                     const std::string& model_ref = {});

ActivationDelta delta(const ActivationPattern& after, const ActivationPattern& before,
                      DeltaMode mode = DeltaMode::absolute);

Json pattern_json(const ActivationPattern& ap);
ActivationPattern pattern_from_json(const Json& j, const std::string& where = {});
void export_pattern(const ActivationPattern& ap, const std::filesystem::path& path);
ActivationPattern import_pattern(const std::filesystem::path& path);

Json delta_json(const ActivationDelta& d);
void export_delta(const ActivationDelta& d, const std::filesystem::path& path);
// Accepts a delta file or a pattern file (taken as a raw grid).
ActivationDelta import_delta(const std::filesystem::path& path);

}  // namespace attnlab
