#pragma once

#include <string>
#include <utility>
#include <vector>

namespace bevflow {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Writes a small standalone SVG line chart. Output is deterministic text.
void write_svg_line_plot(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series);

}  // namespace bevflow
