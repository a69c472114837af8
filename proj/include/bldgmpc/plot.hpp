#pragma once

// Minimal static SVG charts for the experiment report: line/scatter plots and
// grouped bar charts with linear axes.

#include "bldgmpc/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace bldgmpc::plot {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % (sizeof colors / sizeof colors[0])];
}

enum class Mark { kLine, kPoints, kStep };

struct Series {
  std::string name;
  std::vector<double> x, y;
  Mark mark = Mark::kLine;
};

struct Chart {
  std::string title, xlabel, ylabel;
  int width = 720, height = 440;
};

namespace detail {

struct Frame {
  double x0, x1, y0, y1;
  double left = 70, right = 170, top = 40, bottom = 55;
  int w, h;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

// "Nice" tick step covering [lo, hi] with about n ticks.
inline double tick_step(double lo, double hi, int n = 6) {
  const double raw = (hi - lo) / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

inline void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    const double d = std::abs(lo) > 0 ? 0.1 * std::abs(lo) : 1.0;
    lo -= d;
    hi += d;
  }
  const double m = 0.04 * (hi - lo);
  lo -= m;
  hi += m;
}

inline void header(std::ostringstream& o, const Chart& c) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << c.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(c.title)
    << "</text>\n";
}

inline void axes(std::ostringstream& o, const Frame& f, const Chart& c, bool x_ticks = true) {
  const double xl = f.px(f.x0), xr = f.px(f.x1), yb = f.py(f.y0), yt = f.py(f.y1);
  o << "<rect x=\"" << xl << "\" y=\"" << yt << "\" width=\"" << xr - xl << "\" height=\"" << yb - yt
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  const double sy = tick_step(f.y0, f.y1);
  for (double v = std::ceil(f.y0 / sy) * sy; v <= f.y1 + 1e-12; v += sy) {
    o << "<line x1=\"" << xl << "\" x2=\"" << xr << "\" y1=\"" << f.py(v) << "\" y2=\"" << f.py(v)
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << xl - 6 << "\" y=\"" << f.py(v) + 4 << "\" text-anchor=\"end\">"
      << fmt(std::abs(v) < 1e-12 ? 0.0 : v) << "</text>\n";
  }
  if (x_ticks) {
    const double sx = tick_step(f.x0, f.x1);
    for (double v = std::ceil(f.x0 / sx) * sx; v <= f.x1 + 1e-12; v += sx)
      o << "<text x=\"" << f.px(v) << "\" y=\"" << yb + 16 << "\" text-anchor=\"middle\">"
        << fmt(std::abs(v) < 1e-12 ? 0.0 : v) << "</text>\n";
  }
  o << "<text x=\"" << (xl + xr) / 2 << "\" y=\"" << c.height - 12 << "\" text-anchor=\"middle\">" << esc(c.xlabel)
    << "</text>\n<text transform=\"translate(18," << (yt + yb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(c.ylabel) << "</text>\n";
}

inline void legend(std::ostringstream& o, const Frame& f, const std::vector<std::string>& names) {
  const double x = f.w - f.right + 12;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = f.top + 10 + 18.0 * static_cast<double>(i);
    o << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"10\" fill=\"" << palette(i)
      << "\"/>\n<text x=\"" << x + 18 << "\" y=\"" << y << "\">" << esc(names[i]) << "</text>\n";
  }
}

}  // namespace detail

inline std::string xy_chart(const Chart& c, const std::vector<Series>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "plot: series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  detail::pad_range(x0, x1);
  detail::pad_range(y0, y1);
  detail::Frame f{x0, x1, y0, y1, 70, 170, 40, 55, c.width, c.height};
  std::ostringstream o;
  detail::header(o, c);
  detail::axes(o, f, c);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    if (s.mark == Mark::kPoints) {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
          o << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"3\" fill=\"" << palette(k)
            << "\" fill-opacity=\"0.7\"/>\n";
      continue;
    }
    o << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << palette(k) << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (s.mark == Mark::kStep && i > 0) o << f.px(s.x[i]) << ',' << f.py(s.y[i - 1]) << ' ';
      o << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
    }
    o << "\"/>\n";
  }
  detail::legend(o, f, names);
  o << "</svg>\n";
  return o.str();
}

/// Grouped bars: one group per category, one bar per value set.
inline std::string bar_chart(const Chart& c, const std::vector<std::string>& categories,
                             const std::vector<std::string>& set_names,
                             const std::vector<std::vector<double>>& values) {
  require(values.size() == set_names.size(), "plot: one value set per name");
  double y1 = 0.0;
  for (const auto& v : values) {
    require(v.size() == categories.size(), "plot: one value per category");
    for (double x : v)
      if (std::isfinite(x)) y1 = std::max(y1, x);
  }
  if (y1 <= 0.0) y1 = 1.0;
  detail::Frame f{0.0, static_cast<double>(categories.size()), 0.0, y1 * 1.08, 70, 170, 40, 55, c.width, c.height};
  std::ostringstream o;
  detail::header(o, c);
  detail::axes(o, f, c, false);
  const double group = f.px(1.0) - f.px(0.0);
  const double bw = 0.8 * group / static_cast<double>(std::max<std::size_t>(1, values.size()));
  for (std::size_t i = 0; i < categories.size(); ++i) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double v = std::isfinite(values[k][i]) ? values[k][i] : 0.0;
      const double x = f.px(static_cast<double>(i)) + 0.1 * group + bw * static_cast<double>(k);
      o << "<rect x=\"" << x << "\" y=\"" << f.py(v) << "\" width=\"" << bw << "\" height=\"" << f.py(0) - f.py(v)
        << "\" fill=\"" << palette(k) << "\"/>\n";
    }
    o << "<text x=\"" << f.px(i + 0.5) << "\" y=\"" << f.py(0) + 16 << "\" text-anchor=\"middle\">"
      << detail::esc(categories[i]) << "</text>\n";
  }
  detail::legend(o, f, set_names);
  o << "</svg>\n";
  return o.str();
}

/// Density histogram over [lo, hi] as step-line coordinates.
inline Series histogram(const std::string& name, const std::vector<double>& data, double lo, double hi, int bins) {
  require(bins >= 1 && hi > lo, "plot: invalid histogram range");
  std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
  for (double v : data) {
    if (!std::isfinite(v) || v < lo || v > hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
    count[static_cast<std::size_t>(b)] += 1.0;
  }
  const double width = (hi - lo) / bins, total = std::max<double>(1.0, static_cast<double>(data.size()));
  Series s{name, {}, {}, Mark::kStep};
  for (int b = 0; b <= bins; ++b) {
    s.x.push_back(lo + b * width);
    s.y.push_back(count[static_cast<std::size_t>(std::min(b, bins - 1))] / (total * width));
  }
  return s;
}

inline void save(const std::string& path, const std::string& svg) {
  std::ofstream out(path);
  if (!out) throw FormatError("plot: cannot write " + path);
  out << svg;
}

}  // namespace bldgmpc::plot
