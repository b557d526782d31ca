#pragma once

// Line plots of CSV columns as standalone SVG.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmpc/error.hpp"

namespace dmpc {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw InvalidInput("csv has no column " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads a CSV written by this project; lines starting with '#' are skipped.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot read " + path);
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty())
      t.header = split_csv_line(line);
    else
      t.rows.push_back(split_csv_line(line));
  }
  if (t.header.empty()) throw ParseError(ParseError::Kind::kMalformedHeader, path + " has no header");
  return t;
}

inline std::string svg_plot(const CsvTable& t, const std::string& x_col, const std::vector<std::string>& y_cols,
                            const std::string& title) {
  const int xi = t.column(x_col);
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
  };
  std::vector<Series> series;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& y : y_cols) {
    const int yi = t.column(y);
    Series s{y, {}};
    for (const auto& r : t.rows) {
      if (static_cast<int>(r.size()) <= std::max(xi, yi)) continue;
      char* ex = nullptr;
      char* ey = nullptr;
      const double xv = std::strtod(r[static_cast<std::size_t>(xi)].c_str(), &ex);
      const double yv = std::strtod(r[static_cast<std::size_t>(yi)].c_str(), &ey);
      if (*ex != '\0' || *ey != '\0' || !std::isfinite(xv) || !std::isfinite(yv)) continue;
      s.pts.emplace_back(xv, yv);
      x0 = std::min(x0, xv);
      x1 = std::max(x1, xv);
      y0 = std::min(y0, yv);
      y1 = std::max(y1, yv);
    }
    series.push_back(std::move(s));
  }
  if (!(x1 >= x0)) throw InsufficientData("no numeric points to plot");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  const double W = 640, Hh = 400, L = 60, R = 150, T = 40, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return Hh - B - (y - y0) / (y1 - y0) * (Hh - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  char buf[256];
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"24\" font-size=\"14\">%s</text>\n", L, title.c_str());
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                L, Hh - B, W - R, Hh - B, L, T, L, Hh - B);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"11\">%.4g</text><text x=\"%g\" y=\"%g\" font-size=\"11\">%.4g</text>\n"
                "<text x=\"4\" y=\"%g\" font-size=\"11\">%.4g</text><text x=\"4\" y=\"%g\" font-size=\"11\">%.4g</text>\n",
                L, Hh - B + 16, x0, W - R - 30, Hh - B + 16, x1, Hh - B, y0, T + 4, y1);
  out += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\">%s</text>\n", (W - R + L) / 2, Hh - 12,
                x_col.c_str());
  out += buf;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 6];
    std::string pts;
    for (const auto& [x, y] : series[i].pts) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
      pts += buf;
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"%s\">%s</text>\n", W - R + 10,
                  T + 16.0 * static_cast<double>(i + 1), color, series[i].name.c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace dmpc
