#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "swapwm/errors.hpp"

namespace swapwm {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool log_x = false;
};

// Columnar text: a header naming "x" and each series, one row per x of the first series.
inline void write_columns(const Figure& fig, const std::string& path) {
  require(!fig.series.empty(), "figure has no series");
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path);
  out << "# " << fig.title << "\n# x";
  for (const auto& s : fig.series) out << '\t' << s.label;
  out << "\n";
  out.precision(10);
  const auto& xs = fig.series.front().x;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out << xs[i];
    for (const auto& s : fig.series) {
      require(s.x.size() == xs.size(), "series '" + s.label + "' is not aligned with the first series");
      out << '\t' << s.y[i];
    }
    out << "\n";
  }
}

inline std::string escape_xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline void write_svg(const Figure& fig, const std::string& path) {
  require(!fig.series.empty(), "figure has no series");
  const double W = 560, H = 380, L = 64, R = 150, T = 40, B = 52;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto fx = [&](double x) { return fig.log_x ? std::log10(x) : x; };
  for (const auto& s : fig.series) {
    require(s.x.size() == s.y.size() && !s.x.empty(), "series '" + s.label + "' is empty or ragged");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, fx(s.x[i]));
      x1 = std::max(x1, fx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  y0 = std::min(y0, 0.0);
  y1 = std::max(y1, 1.0);
  if (x1 == x0) x1 = x0 + 1;
  auto px = [&](double x) { return L + (fx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(fig.title)
    << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << std::round(yv * 100) / 100
      << "</text>\n";
  }
  for (const auto& s0 = fig.series.front(); double xv : s0.x)
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << escape_xml(fig.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape_xml(fig.y_label) << "</text>\n";
  for (std::size_t si = 0; si < fig.series.size(); ++si) {
    const auto& s = fig.series[si];
    const char* c = colors[si % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    double ly = T + 14 + 18.0 * static_cast<double>(si);
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path);
  out << o.str();
}

}  // namespace swapwm
