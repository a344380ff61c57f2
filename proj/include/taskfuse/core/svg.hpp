#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskfuse {

// Minimal line-chart writer for the report command. One fixed-size canvas,
// auto-scaled axes, a handful of preset colors. Not a plotting library.

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

inline void save_line_chart(const std::string& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            const std::vector<SvgSeries>& series) {
  const int W = 640, H = 400;
  const int ml = 60, mr = 20, mt = 36, mb = 44;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmin < xmax)) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (!(ymin < ymax)) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"14\">" << title << "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + i * (ymax - ymin) / 4;
    const double yy = py(yv);
    o << "<line x1=\"" << ml << "\" y1=\"" << yy << "\" x2=\"" << W - mr << "\" y2=\"" << yy
      << "\" stroke=\"#ddd\"/>\n";
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.3g", yv);
    o << "<text x=\"" << ml - 6 << "\" y=\"" << yy + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << lbl << "</text>\n";
    const double xv = xmin + i * (xmax - xmin) / 4;
    const double xx = px(xv);
    std::snprintf(lbl, sizeof(lbl), "%.3g", xv);
    o << "<text x=\"" << xx << "\" y=\"" << H - mb + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << lbl << "</text>\n";
  }
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\""
    << H - mt - mb << "\" fill=\"none\" stroke=\"#333\"/>\n";
  o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 8
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel << "</text>\n";
  o << "<text x=\"14\" y=\"" << (mt + H - mb) / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
    << (mt + H - mb) / 2 << ")\">" << ylabel << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* col = colors[si % 6];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) o << ' ';
      o << px(s.x[i]) << ',' << py(s.y[i]);
    }
    o << "\"/>\n";
    const int ly = mt + 16 + static_cast<int>(si) * 16;
    o << "<line x1=\"" << W - mr - 120 << "\" y1=\"" << ly << "\" x2=\"" << W - mr - 100 << "\" y2=\""
      << ly << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - mr - 94 << "\" y=\"" << ly + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("svg: cannot write " + path);
  out << o.str();
}

inline void save_bar_chart(const std::string& path, const std::string& title,
                           const std::vector<std::string>& labels,
                           const std::vector<double>& values) {
  if (labels.size() != values.size()) throw std::invalid_argument("bar chart: label/value mismatch");
  if (labels.empty()) throw std::invalid_argument("bar chart: nothing to draw");
  const int W = 640, H = 400;
  const int ml = 60, mr = 20, mt = 36, mb = 44;
  double ymax = 0.0, ymin = 0.0;
  for (double v : values) {
    ymax = std::max(ymax, v);
    ymin = std::min(ymin, v);
  }
  if (!(ymin < ymax)) ymax = ymin + 1.0;
  const double span = ymax - ymin;
  auto py = [&](double y) { return H - mb - (y - ymin) / span * (H - mt - mb); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"14\">" << title << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + i * span / 4;
    const double yy = py(yv);
    o << "<line x1=\"" << ml << "\" y1=\"" << yy << "\" x2=\"" << W - mr << "\" y2=\"" << yy
      << "\" stroke=\"#ddd\"/>\n";
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.3g", yv);
    o << "<text x=\"" << ml - 6 << "\" y=\"" << yy + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << lbl << "</text>\n";
  }
  const double slot = static_cast<double>(W - ml - mr) / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x0 = ml + slot * static_cast<double>(i) + slot * 0.15;
    const double top = py(std::max(values[i], 0.0));
    const double bottom = py(std::min(values[i], 0.0));
    o << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << slot * 0.7 << "\" height=\""
      << std::max(1.0, bottom - top) << "\" fill=\"#1f77b4\"/>\n";
    o << "<text x=\"" << x0 + slot * 0.35 << "\" y=\"" << H - mb + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << labels[i]
      << "</text>\n";
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.3g", values[i]);
    o << "<text x=\"" << x0 + slot * 0.35 << "\" y=\"" << top - 4
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << lbl
      << "</text>\n";
  }
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\""
    << H - mt - mb << "\" fill=\"none\" stroke=\"#333\"/>\n";
  o << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("svg: cannot write " + path);
  out << o.str();
}

}  // namespace taskfuse
