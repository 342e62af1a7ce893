#pragma once

#include <string>
#include <vector>

#include "mimlab/common.hpp"

namespace mimlab {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotData {
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
};

// Self-contained SVG; output bytes depend only on the input data.
std::string render_svg(const PlotData& data);

// kind: loss_curve (a metrics.csv), sweep_curve (a sweep results.csv),
// probe_curve (a probe eval.csv). Raises a configuration error when the
// CSV does not carry the columns the kind needs.
void render_plot(const std::string& csv_path, const std::string& kind, const std::string& out_path);

}  // namespace mimlab
