#pragma once

#include <string>
#include <vector>

namespace freqlab::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Self-contained SVG with axes, tick labels, one polyline per series and a
/// legend. Non-finite points are dropped. Output depends only on the input.
std::string svg(const LinePlot& plot);
void write_svg(const std::string& path, const LinePlot& plot);

}  // namespace freqlab::plot
