#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "svcca/analysis.hpp"

namespace svcca::report {

enum class Format { csv, json, svg };

Format parse_format(const std::string& s);
const char* extension(Format f);

/// Series over a shared x axis.
struct LineChart {
  std::string title, x_label, y_label;
  std::vector<double> x;
  std::vector<std::string> x_ticks;  ///< optional labels, one per x
  std::vector<std::string> series;
  MatrixXd y;  ///< series x points
};

/// Fixed "%.12g" rendering so output is byte-stable.
std::string number(double v);

std::string grid_csv(const analysis::SimilarityGrid& g);
std::string grid_json(const analysis::SimilarityGrid& g);
/// Heatmap built only from svg, rect, text and line elements.
std::string grid_svg(const analysis::SimilarityGrid& g);
std::string render(const analysis::SimilarityGrid& g, Format f);

std::string chart_csv(const LineChart& c);
std::string chart_json(const LineChart& c);
/// Line plot built only from svg, rect, text, line and polyline elements.
std::string chart_svg(const LineChart& c);
std::string render(const LineChart& c, Format f);

LineChart convergence_chart(const analysis::ConvergenceCurves& c);
LineChart sensitivity_chart(const analysis::ClassSensitivity& s);

std::string plan_json(const analysis::CompressionPlan& p);

/// SVG element names any emitted document may contain.
const std::vector<std::string>& svg_elements();

void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace svcca::report
