#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "adnn/format.hpp"

namespace adnn::report {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_field(cells[i]);
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

/// Report number: 10 significant digits, "nan" for missing.
inline std::string num(double v) { return std::isfinite(v) ? format_report(v, 10) : "nan"; }

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                        "#9467bd", "#8c564b", "#e377c2", "#17becf"};

struct Series {
  std::string name;
  std::vector<double> values;
};

namespace detail {

struct Frame {
  double width = 720, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  double x0() const { return left; }
  double x1() const { return width - right; }
  double y0() const { return height - bottom; }
  double y1() const { return top; }
};

inline std::string fmt(double v) { return format_report(v, 6); }

inline std::string header(const Frame& f, const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(f.width) + "\" height=\"" +
                  fmt(f.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       escape_xml(title) + "</text>\n";
  return s;
}

inline std::string axes(const Frame& f, double lo, double hi, const std::string& xlo, const std::string& xhi) {
  std::string s;
  s += "<line x1=\"" + fmt(f.x0()) + "\" y1=\"" + fmt(f.y0()) + "\" x2=\"" + fmt(f.x1()) + "\" y2=\"" +
       fmt(f.y0()) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(f.x0()) + "\" y1=\"" + fmt(f.y0()) + "\" x2=\"" + fmt(f.x0()) + "\" y2=\"" +
       fmt(f.y1()) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const double y = f.y0() - (f.y0() - f.y1()) * t / 4.0;
    s += "<text x=\"" + fmt(f.x0() - 5) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" + fmt(v) + "</text>\n";
  }
  s += "<text x=\"" + fmt(f.x0()) + "\" y=\"" + fmt(f.y0() + 18) + "\">" + escape_xml(xlo) + "</text>\n";
  s += "<text x=\"" + fmt(f.x1()) + "\" y=\"" + fmt(f.y0() + 18) + "\" text-anchor=\"end\">" + escape_xml(xhi) +
       "</text>\n";
  return s;
}

inline std::pair<double, double> bounds(const std::vector<double>& all) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : all) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

/// Polyline chart; every series shares the x axis given by `labels`.
inline std::string line_chart(const std::string& title, const std::vector<std::string>& labels,
                              const std::vector<Series>& series) {
  detail::Frame f;
  std::vector<double> all;
  for (const auto& s : series) all.insert(all.end(), s.values.begin(), s.values.end());
  const auto [lo, hi] = detail::bounds(all);
  std::string svg = detail::header(f, title);
  svg += detail::axes(f, lo, hi, labels.empty() ? "" : labels.front(), labels.empty() ? "" : labels.back());
  const double n = std::max<double>(1.0, static_cast<double>(labels.size()) - 1.0);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % kPalette.size()];
    std::string pts;
    for (std::size_t i = 0; i < series[k].values.size(); ++i) {
      const double v = series[k].values[i];
      if (!std::isfinite(v)) continue;
      const double x = f.x0() + (f.x1() - f.x0()) * static_cast<double>(i) / n;
      const double y = f.y0() - (f.y0() - f.y1()) * (v - lo) / (hi - lo);
      pts += detail::fmt(x) + "," + detail::fmt(y) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    const double ly = f.y1() + 16.0 * static_cast<double>(k);
    svg += "<rect x=\"" + detail::fmt(f.x1() + 10) + "\" y=\"" + detail::fmt(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + detail::fmt(f.x1() + 25) + "\" y=\"" + detail::fmt(ly + 1) + "\">" +
           escape_xml(series[k].name) + "</text>\n";
  }
  return svg + "</svg>\n";
}

struct Point {
  double x = 0, y = 0;
  std::string label;
  std::size_t group = 0;
};

/// Scatter with one color per group and a legend of group names.
inline std::string scatter(const std::string& title, const std::vector<Point>& points,
                           const std::vector<std::string>& groups) {
  detail::Frame f;
  f.width = f.height = 560;
  f.right = 150;
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const auto [xlo, xhi] = detail::bounds(xs);
  const auto [ylo, yhi] = detail::bounds(ys);
  std::string svg = detail::header(f, title);
  svg += detail::axes(f, ylo, yhi, detail::fmt(xlo), detail::fmt(xhi));
  for (const auto& p : points) {
    const double x = f.x0() + (f.x1() - f.x0()) * (p.x - xlo) / (xhi - xlo);
    const double y = f.y0() - (f.y0() - f.y1()) * (p.y - ylo) / (yhi - ylo);
    svg += "<circle cx=\"" + detail::fmt(x) + "\" cy=\"" + detail::fmt(y) + "\" r=\"4\" fill=\"" +
           kPalette[p.group % kPalette.size()] + "\"><title>" + escape_xml(p.label) + "</title></circle>\n";
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double ly = f.y1() + 16.0 * static_cast<double>(g);
    svg += "<rect x=\"" + detail::fmt(f.x1() + 10) + "\" y=\"" + detail::fmt(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + kPalette[g % kPalette.size()] + "\"/>\n";
    svg += "<text x=\"" + detail::fmt(f.x1() + 25) + "\" y=\"" + detail::fmt(ly + 1) + "\">" +
           escape_xml(groups[g]) + "</text>\n";
  }
  return svg + "</svg>\n";
}

}  // namespace adnn::report
