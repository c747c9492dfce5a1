#include "svcca/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace svcca::report {

using nlohmann::ordered_json;

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string heat_colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = int(247 - v * (247 - 8));
  const int g = int(251 - v * (251 - 48));
  const int b = int(255 - v * (255 - 107));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

ordered_json matrix_json(const MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  if (s == "svg") return Format::svg;
  throw FormatError("unknown format: " + s);
}

const char* extension(Format f) {
  switch (f) {
    case Format::csv: return ".csv";
    case Format::json: return ".json";
    case Format::svg: return ".svg";
  }
  return "";
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

const std::vector<std::string>& svg_elements() {
  static const std::vector<std::string> names{"svg", "rect", "text", "line", "polyline"};
  return names;
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

std::string grid_csv(const analysis::SimilarityGrid& g) {
  std::ostringstream out;
  out << "layer";
  for (const auto& c : g.cols) out << ',' << csv_field(c);
  out << '\n';
  for (Index i = 0; i < g.values.rows(); ++i) {
    out << csv_field(g.rows[std::size_t(i)]);
    for (Index j = 0; j < g.values.cols(); ++j) out << ',' << number(g.values(i, j));
    out << '\n';
  }
  return out.str();
}

std::string grid_json(const analysis::SimilarityGrid& g) {
  ordered_json j;
  j["rows"] = g.rows;
  j["cols"] = g.cols;
  j["row_step"] = g.row_step;
  j["col_step"] = g.col_step;
  j["threshold"] = g.threshold;
  j["denominator"] = analysis::to_string(g.denominator);
  j["values"] = matrix_json(g.values);
  return j.dump(2) + "\n";
}

std::string grid_svg(const analysis::SimilarityGrid& g) {
  const double cell = 48, left = 110, top = 70;
  const double width = left + cell * double(g.cols.size()) + 20;
  const double height = top + cell * double(g.rows.size()) + 20;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\"" << px(height) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << px(width) << "\" height=\"" << px(height) << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << px(left) << "\" y=\"20\" font-size=\"13\">step " << g.row_step << " vs step " << g.col_step
      << "</text>\n";
  for (std::size_t j = 0; j < g.cols.size(); ++j)
    out << "<text x=\"" << px(left + cell * (double(j) + 0.5)) << "\" y=\"" << px(top - 8)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << xml(g.cols[j]) << "</text>\n";
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const double y = top + cell * double(i);
    out << "<text x=\"" << px(left - 6) << "\" y=\"" << px(y + cell / 2 + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
        << xml(g.rows[i]) << "</text>\n";
    for (std::size_t j = 0; j < g.cols.size(); ++j) {
      const double v = g.values(Index(i), Index(j));
      const double x = left + cell * double(j);
      out << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(cell) << "\" height=\"" << px(cell)
          << "\" fill=\"" << heat_colour(v) << "\"/>\n";
      out << "<text x=\"" << px(x + cell / 2) << "\" y=\"" << px(y + cell / 2 + 4) << "\" font-size=\"10\" text-anchor=\"middle\" fill=\""
          << (v > 0.55 ? "#ffffff" : "#000000") << "\">" << px(v) << "</text>\n";
    }
  }
  out << "<line x1=\"" << px(left) << "\" y1=\"" << px(top) << "\" x2=\"" << px(width - 20) << "\" y2=\"" << px(top)
      << "\" stroke=\"#000000\"/>\n";
  out << "</svg>\n";
  return out.str();
}

std::string render(const analysis::SimilarityGrid& g, Format f) {
  switch (f) {
    case Format::csv: return grid_csv(g);
    case Format::json: return grid_json(g);
    case Format::svg: return grid_svg(g);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Line charts
// ---------------------------------------------------------------------------

std::string chart_csv(const LineChart& c) {
  std::ostringstream out;
  out << csv_field(c.x_label.empty() ? "x" : c.x_label);
  for (const auto& s : c.series) out << ',' << csv_field(s);
  out << '\n';
  for (std::size_t p = 0; p < c.x.size(); ++p) {
    out << (c.x_ticks.size() == c.x.size() ? csv_field(c.x_ticks[p]) : number(c.x[p]));
    for (Index s = 0; s < c.y.rows(); ++s) out << ',' << number(c.y(s, Index(p)));
    out << '\n';
  }
  return out.str();
}

std::string chart_json(const LineChart& c) {
  ordered_json j;
  j["title"] = c.title;
  j["x_label"] = c.x_label;
  j["y_label"] = c.y_label;
  j["x"] = c.x;
  if (!c.x_ticks.empty()) j["x_ticks"] = c.x_ticks;
  j["series"] = c.series;
  j["y"] = matrix_json(c.y);
  return j.dump(2) + "\n";
}

std::string chart_svg(const LineChart& c) {
  const double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!c.x.empty()) {
    xmin = *std::min_element(c.x.begin(), c.x.end());
    xmax = *std::max_element(c.x.begin(), c.x.end());
  }
  if (c.y.size() > 0) {
    ymin = std::min(0.0, c.y.minCoeff());
    ymax = std::max(ymin + 1e-12, c.y.maxCoeff());
  }
  if (xmax <= xmin) xmax = xmin + 1;
  auto sx = [&](double v) { return left + pw * (v - xmin) / (xmax - xmin); };
  auto sy = [&](double v) { return top + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\"" << px(height) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << px(width) << "\" height=\"" << px(height) << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << px(left) << "\" y=\"24\" font-size=\"14\">" << xml(c.title) << "</text>\n";
  out << "<line x1=\"" << px(left) << "\" y1=\"" << px(top + ph) << "\" x2=\"" << px(left + pw) << "\" y2=\"" << px(top + ph)
      << "\" stroke=\"#000000\"/>\n";
  out << "<line x1=\"" << px(left) << "\" y1=\"" << px(top) << "\" x2=\"" << px(left) << "\" y2=\"" << px(top + ph)
      << "\" stroke=\"#000000\"/>\n";
  out << "<text x=\"" << px(left + pw / 2) << "\" y=\"" << px(height - 10) << "\" font-size=\"12\" text-anchor=\"middle\">"
      << xml(c.x_label) << "</text>\n";
  out << "<text x=\"12\" y=\"" << px(top - 10) << "\" font-size=\"12\">" << xml(c.y_label) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    out << "<text x=\"" << px(left - 6) << "\" y=\"" << px(sy(v) + 4) << "\" font-size=\"10\" text-anchor=\"end\">" << number(v)
        << "</text>\n";
  }
  for (std::size_t p = 0; p < c.x.size(); ++p) {
    const std::string label = c.x_ticks.size() == c.x.size() ? c.x_ticks[p] : number(c.x[p]);
    out << "<text x=\"" << px(sx(c.x[p])) << "\" y=\"" << px(top + ph + 16) << "\" font-size=\"10\" text-anchor=\"middle\">"
        << xml(label) << "</text>\n";
  }
  for (Index s = 0; s < c.y.rows(); ++s) {
    const char* colour = kPalette[std::size_t(s) % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t p = 0; p < c.x.size(); ++p) out << (p ? " " : "") << px(sx(c.x[p])) << ',' << px(sy(c.y(s, Index(p))));
    out << "\"/>\n";
    const double ly = top + 16.0 * double(s);
    out << "<line x1=\"" << px(left + pw + 12) << "\" y1=\"" << px(ly) << "\" x2=\"" << px(left + pw + 32) << "\" y2=\"" << px(ly)
        << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << px(left + pw + 36) << "\" y=\"" << px(ly + 4) << "\" font-size=\"11\">"
        << xml(std::size_t(s) < c.series.size() ? c.series[std::size_t(s)] : "") << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string render(const LineChart& c, Format f) {
  switch (f) {
    case Format::csv: return chart_csv(c);
    case Format::json: return chart_json(c);
    case Format::svg: return chart_svg(c);
  }
  return {};
}

LineChart convergence_chart(const analysis::ConvergenceCurves& c) {
  LineChart chart;
  chart.title = "similarity with final representation";
  chart.x_label = "step";
  chart.y_label = "mean similarity";
  for (auto s : c.steps) chart.x.push_back(double(s));
  chart.series = c.layers;
  chart.y = c.values;
  return chart;
}

LineChart sensitivity_chart(const analysis::ClassSensitivity& s) {
  LineChart chart;
  chart.title = "logit similarity by layer";
  chart.x_label = "layer";
  chart.y_label = "similarity";
  for (std::size_t i = 0; i < s.layers.size(); ++i) chart.x.push_back(double(i));
  chart.x_ticks = s.layers;
  for (Index c = 0; c < s.values.rows(); ++c) chart.series.push_back("class " + std::to_string(c));
  chart.y = s.values;
  return chart;
}

std::string plan_json(const analysis::CompressionPlan& p) {
  ordered_json j;
  j["layer"] = p.layer;
  j["k"] = p.k;
  j["n"] = p.n;
  j["out"] = p.out;
  j["size_ratio"] = p.size_ratio;
  j["parameter_count"] = p.parameter_count();
  j["original_parameter_count"] = p.original_parameter_count();
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace svcca::report
