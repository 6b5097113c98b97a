#pragma once

// Minimal static SVG line/scatter plots for campaign reports.

#include <string>
#include <vector>

namespace dlcz::cli {

enum class SeriesStyle { solid, dotted, points };

struct Series {
  std::string label;
  SeriesStyle style = SeriesStyle::solid;
  std::vector<double> x, y;
  std::vector<double> err;  // points only; empty for no error bars
  std::string color = "#1f4e9c";
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool zero_line = true;
  std::vector<Series> series;
};

std::string render_svg(const Plot& plot);

}  // namespace dlcz::cli
