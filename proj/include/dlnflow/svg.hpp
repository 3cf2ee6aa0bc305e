#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlnflow {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string fmt_tick(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace detail

// Static line plot; one polyline per series with a legend in the top right.
inline std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const double ml = 64, mr = 16, mt = 32, mb = 48;
  const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
  auto ty = [&](double y) { return opt.log_y ? std::log10(y) : y; };

  double x0 = HUGE_VAL, x1 = -HUGE_VAL, y0 = HUGE_VAL, y1 = -HUGE_VAL;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (opt.log_y && !(s.y[i] > 0.0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return mt + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << opt.width << R"(" height=")"
     << opt.height << R"(" font-family="sans-serif" font-size="11">)" << '\n';
  os << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    const double sx = ml + pw * k / 4.0, sy = mt + ph * (1.0 - k / 4.0);
    os << "<text x=\"" << sx << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">"
       << detail::fmt_tick(fx) << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
       << detail::fmt_tick(opt.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << opt.height - 10
     << "\" text-anchor=\"middle\">" << detail::svg_escape(opt.x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << mt + ph / 2 << "\" transform=\"rotate(-90 14 " << mt + ph / 2
     << ")\" text-anchor=\"middle\">" << detail::svg_escape(opt.y_label) << "</text>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << detail::svg_escape(opt.title) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* colour = palette[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\"";
    if (ser.dashed) os << " stroke-dasharray=\"5,3\"";
    os << " points=\"";
    for (std::size_t i = 0; i < std::min(ser.x.size(), ser.y.size()); ++i) {
      if (!std::isfinite(ser.y[i]) || (opt.log_y && !(ser.y[i] > 0.0))) continue;
      os << px(ser.x[i]) << ',' << py(ser.y[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = mt + 14 + 14 * static_cast<double>(s);
    os << "<line x1=\"" << ml + pw - 120 << "\" y1=\"" << ly - 4 << "\" x2=\"" << ml + pw - 100
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\"/>\n";
    os << "<text x=\"" << ml + pw - 96 << "\" y=\"" << ly << "\">"
       << detail::svg_escape(ser.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_svg(const std::string& path, const std::vector<Series>& series,
                      const PlotOptions& opt) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << render_svg(series, opt);
}

}  // namespace dlnflow
