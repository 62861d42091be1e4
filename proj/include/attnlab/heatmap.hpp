#pragma once

#include <array>
#include <string>

#include "attnlab/profiler.hpp"

namespace attnlab {

using Rgb = std::array<int, 3>;

// Two-color ramp: kRampLow at the pattern minimum, kRampHigh at the maximum.
inline constexpr Rgb kRampLow{247, 251, 255};
inline constexpr Rgb kRampHigh{8, 48, 107};

Rgb ramp_color(double t);
std::string hex_color(const Rgb& c);

// H columns × L rows, one <rect class="cell"> per head. A constant pattern is
// drawn in the ramp midpoint with a degenerate-range note in the legend.
std::string heatmap_svg(const HeadGrid& grid, const std::string& title = {});

}  // namespace attnlab
