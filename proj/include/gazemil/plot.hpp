#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gazemil/metrics.hpp"

namespace gazemil {

struct LineSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  bool diagonal = false;  // dashed y = x reference
};

/// Standalone SVG line chart with a legend. Output depends only on the
/// inputs (no timestamps), so reruns are byte-identical.
std::string line_chart_svg(const ChartSpec& spec, std::span<const LineSeries> series);
void write_svg(const std::filesystem::path& path, const std::string& svg);

/// ROC curves with AUC in the legend.
std::string roc_svg(std::span<const std::string> names, std::span<const RocCurve> curves);

}  // namespace gazemil
