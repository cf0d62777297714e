#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mapo::svgplot {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // sorted by x by the caller
};

/// Self-contained SVG line chart, byte-deterministic for identical inputs
/// (fixed canvas, palette, and number formatting).
std::string render_line_chart(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, const std::vector<Series>& series);

}  // namespace mapo::svgplot
