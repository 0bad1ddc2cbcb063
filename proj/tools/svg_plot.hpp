#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace mhkt::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal static line chart: polyline per series, axis box, tick labels.
inline void write_svg(const std::string& path, const std::vector<Series>& series, const std::string& x_label,
                      const std::string& y_label) {
  const int width = 720, height = 480, margin = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); };
  auto py = [&](double y) { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); };

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ofstream os(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin << "\" height=\""
     << height - 2 * margin << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << height - margin + 20 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << xv << "</text>\n";
    os << "<text x=\"" << margin - 8 << "\" y=\"" << py(yv) + 4 << "\" font-size=\"12\" text-anchor=\"end\">" << yv
       << "</text>\n";
  }
  os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" font-size=\"14\" text-anchor=\"middle\">"
     << x_label << "</text>\n";
  os << "<text x=\"16\" y=\"" << height / 2 << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << height / 2 << ")\">" << y_label << "</text>\n";

  int ci = 0;
  for (const auto& s : series) {
    const char* color = colors[ci % 10];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
    os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * ci << "\" font-size=\"12\" fill=\"" << color
       << "\">" << s.label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

}  // namespace mhkt::plot
