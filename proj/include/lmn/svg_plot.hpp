// SPDX-License-Identifier: Apache-2.0
//
// Minimal static SVG line plots with optional log-scaled axes. Output is a
// pure function of the inputs; all numbers are printed with fixed formats.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace lmn {

struct PlotSeries {
  std::string name;
  std::string color;
  std::vector<double> xs;
  std::vector<double> ys;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 400;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

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

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double t(double v) const {
    const double a = log ? std::log10(v) : v;
    return (a - lo) / (hi - lo);
  }
  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }
};

inline Axis make_axis(const std::vector<PlotSeries>& series, bool use_x, bool log) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    const auto& vals = use_x ? s.xs : s.ys;
    for (double v : vals) {
      if (!std::isfinite(v) || (log && v <= 0.0)) continue;
      const double a = log ? std::log10(v) : v;
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.05, log ? 0.5 : 0.5);
    lo -= pad;
    hi += pad;
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, log};
}

/// Tick positions in data units (powers of ten for log axes).
inline std::vector<double> ticks(const Axis& ax) {
  std::vector<double> out;
  if (ax.log) {
    for (double e = std::ceil(ax.lo - 1e-9); e <= ax.hi + 1e-9; e += 1.0) out.push_back(std::pow(10.0, e));
    return out;
  }
  const double span = ax.hi - ax.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  for (double v = std::ceil(ax.lo / step) * step; v <= ax.hi + 1e-12 * span; v += step)
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return out;
}

}  // namespace detail

inline std::string render_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  using detail::fmt;
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  const detail::Axis ax = detail::make_axis(series, true, spec.log_x);
  const detail::Axis ay = detail::make_axis(series, false, spec.log_y);
  auto px = [&](double x) { return left + ax.t(x) * pw; };
  auto py = [&](double y) { return top + (1.0 - ay.t(y)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt("%.1f", left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(spec.title) << "</text>\n";
  os << "<rect x=\"" << fmt("%.1f", left) << "\" y=\"" << fmt("%.1f", top) << "\" width=\"" << fmt("%.1f", pw)
     << "\" height=\"" << fmt("%.1f", ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double tx : detail::ticks(ax)) {
    const double x = px(tx);
    os << "<line x1=\"" << fmt("%.1f", x) << "\" y1=\"" << fmt("%.1f", top + ph) << "\" x2=\"" << fmt("%.1f", x)
       << "\" y2=\"" << fmt("%.1f", top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << fmt("%.1f", top + ph + 18) << "\" text-anchor=\"middle\">"
       << fmt("%g", tx) << "</text>\n";
  }
  for (double ty : detail::ticks(ay)) {
    const double y = py(ty);
    os << "<line x1=\"" << fmt("%.1f", left - 5) << "\" y1=\"" << fmt("%.1f", y) << "\" x2=\"" << fmt("%.1f", left)
       << "\" y2=\"" << fmt("%.1f", y) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt("%.1f", left - 8) << "\" y=\"" << fmt("%.1f", y + 4) << "\" text-anchor=\"end\">"
       << fmt("%g", ty) << "</text>\n";
  }
  os << "<text x=\"" << fmt("%.1f", left + pw / 2) << "\" y=\"" << spec.height - 10 << "\" text-anchor=\"middle\">"
     << detail::xml_escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << fmt("%.1f", top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::xml_escape(spec.y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    // Break the polyline wherever a point cannot be placed on the axes.
    std::string pts;
    auto flush = [&] {
      if (!pts.empty())
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
      pts.clear();
    };
    for (std::size_t i = 0; i < std::min(s.xs.size(), s.ys.size()); ++i) {
      if (!ax.usable(s.xs[i]) || !ay.usable(s.ys[i])) {
        flush();
        continue;
      }
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.2f", px(s.xs[i])) + "," + fmt("%.2f", py(s.ys[i]));
    }
    flush();
    const double ly = top + 10 + 18.0 * static_cast<double>(si);
    os << "<line x1=\"" << fmt("%.1f", left + pw + 10) << "\" y1=\"" << fmt("%.1f", ly) << "\" x2=\""
       << fmt("%.1f", left + pw + 30) << "\" y2=\"" << fmt("%.1f", ly) << "\" stroke=\"" << s.color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt("%.1f", left + pw + 35) << "\" y=\"" << fmt("%.1f", ly + 4) << "\">"
       << detail::xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lmn
