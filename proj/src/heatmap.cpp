#include "attnlab/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace attnlab {

namespace {

constexpr int kCell = 36;
constexpr int kLeft = 48;
constexpr int kTop = 40;
constexpr int kLegendHeight = 56;

std::string sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Rgb ramp_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  Rgb c{};
  for (std::size_t i = 0; i < 3; ++i) {
    c[i] = static_cast<int>(std::lround(kRampLow[i] + t * (kRampHigh[i] - kRampLow[i])));
  }
  return c;
}

std::string hex_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string heatmap_svg(const HeadGrid& grid, const std::string& title) {
  const auto [lo_it, hi_it] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double lo = *lo_it, hi = *hi_it;
  const bool degenerate = !(hi > lo);
  const int width = kLeft + grid.heads * kCell + 16;
  const int height = kTop + grid.layers * kCell + kLegendHeight;

  std::ostringstream os;
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << width << R"(" height=")" << height
     << R"(" font-family="sans-serif" font-size="11">)" << '\n';
  os << "<title>" << escape(title.empty() ? "activation pattern" : title) << "</title>\n";
  os << R"(<text x=")" << kLeft << R"(" y="14">head</text>)" << '\n';
  os << R"(<text x="4" y=")" << kTop - 6 << R"(">layer</text>)" << '\n';
  for (int h = 0; h < grid.heads; ++h) {
    os << R"(<text class="axis" x=")" << kLeft + h * kCell + kCell / 2 << R"(" y=")" << kTop - 8
       << R"(" text-anchor="middle">)" << h << "</text>\n";
  }
  for (int l = 0; l < grid.layers; ++l) {
    os << R"(<text class="axis" x=")" << kLeft - 8 << R"(" y=")" << kTop + l * kCell + kCell / 2 + 4
       << R"(" text-anchor="end">)" << l << "</text>\n";
  }
  for (int l = 0; l < grid.layers; ++l) {
    for (int h = 0; h < grid.heads; ++h) {
      const double v = grid.at(l, h);
      const double t = degenerate ? 0.5 : (v - lo) / (hi - lo);
      os << R"(<rect class="cell" x=")" << kLeft + h * kCell << R"(" y=")" << kTop + l * kCell << R"(" width=")"
         << kCell << R"(" height=")" << kCell << R"(" fill=")" << hex_color(ramp_color(t)) << R"("><title>L)" << l
         << " H" << h << ": " << sig4(v) << "</title></rect>\n";
    }
  }
  const int ly = kTop + grid.layers * kCell + 18;
  os << R"(<g class="legend">)" << '\n';
  os << R"(<rect x=")" << kLeft << R"(" y=")" << ly - 10 << R"(" width="12" height="12" fill=")"
     << hex_color(kRampLow) << R"(" stroke="#999"/>)" << '\n';
  os << R"(<text x=")" << kLeft + 16 << R"(" y=")" << ly << R"(">min )" << sig4(lo) << "</text>\n";
  os << R"(<rect x=")" << kLeft << R"(" y=")" << ly + 6 << R"(" width="12" height="12" fill=")"
     << hex_color(kRampHigh) << R"("/>)" << '\n';
  os << R"(<text x=")" << kLeft + 16 << R"(" y=")" << ly + 16 << R"(">max )" << sig4(hi) << "</text>\n";
  if (degenerate) {
    os << R"(<text x=")" << kLeft + 16 << R"(" y=")" << ly + 32 << R"(">degenerate range: constant pattern</text>)"
       << '\n';
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace attnlab
