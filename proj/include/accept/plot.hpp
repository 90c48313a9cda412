#pragma once

// Static SVG line charts.

#include <accept/util.hpp>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace accept {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string colour = "#1f77b4";
  bool dashed = false;
};

struct Chart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  int width = 720, height = 440;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return p;
}

inline std::string render_svg(const Chart& chart) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]); x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]); y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) { x0 = std::isfinite(x0) ? x0 - 1 : 0; x1 = x0 + 2; }
  if (!(y1 > y0)) { y0 = std::isfinite(y0) ? y0 - 0.5 : 0; y1 = y0 + 1; }
  const double pad = 0.04 * (y1 - y0);
  y0 -= pad; y1 += pad;

  const double L = 70, R = 160, T = 40, B = 55;
  const double W = chart.width - L - R, H = chart.height - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * W; };
  auto py = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * H; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(chart.width) + "\" height=\"" +
                    std::to_string(chart.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt(L + W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(chart.title) + "</text>\n";
  svg += "<rect x=\"" + detail::fmt(L) + "\" y=\"" + detail::fmt(T) + "\" width=\"" + detail::fmt(W) + "\" height=\"" +
         detail::fmt(H) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    svg += "<text x=\"" + detail::fmt(px(xv)) + "\" y=\"" + detail::fmt(T + H + 16) + "\" text-anchor=\"middle\">" +
           detail::fmt(xv, "%.4g") + "</text>\n";
    svg += "<text x=\"" + detail::fmt(L - 6) + "\" y=\"" + detail::fmt(py(yv) + 4) + "\" text-anchor=\"end\">" +
           detail::fmt(yv, "%.4g") + "</text>\n";
    svg += "<line x1=\"" + detail::fmt(L) + "\" x2=\"" + detail::fmt(L + W) + "\" y1=\"" + detail::fmt(py(yv)) + "\" y2=\"" +
           detail::fmt(py(yv)) + "\" stroke=\"#ddd\"/>\n";
  }
  svg += "<text x=\"" + detail::fmt(L + W / 2) + "\" y=\"" + detail::fmt(chart.height - 14.0) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(chart.x_label) + "</text>\n";
  svg += "<text transform=\"translate(18," + detail::fmt(T + H / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         detail::xml_escape(chart.y_label) + "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    std::string pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts += detail::fmt(px(s.x[i])) + "," + detail::fmt(py(s.y[i])) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + s.colour + "\" stroke-width=\"1.6\"" +
           (s.dashed ? std::string(" stroke-dasharray=\"5,3\"") : std::string()) + " points=\"" + pts + "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    svg += "<line x1=\"" + detail::fmt(L + W + 12) + "\" x2=\"" + detail::fmt(L + W + 34) + "\" y1=\"" + detail::fmt(ly - 4) +
           "\" y2=\"" + detail::fmt(ly - 4) + "\" stroke=\"" + s.colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + detail::fmt(L + W + 40) + "\" y=\"" + detail::fmt(ly) + "\">" + detail::xml_escape(s.label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace accept
