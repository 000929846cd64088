/* Copyright 2026 The Podracer Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "podracer/common.hpp"

namespace podracer {

/// Minimal single-series line chart. Enough for throughput-vs-axis plots;
/// no dependency beyond the SVG spec itself.
inline void write_line_chart_svg(const std::string& path, const std::string& title,
                                 const std::string& x_label,
                                 const std::string& y_label,
                                 std::vector<std::pair<double, double>> points) {
  if (points.empty()) throw ConfigError("plot needs at least one point");
  std::sort(points.begin(), points.end());

  const double width = 640, height = 420;
  const double ml = 70, mr = 20, mt = 40, mb = 50;  // margins
  double xmin = points.front().first, xmax = points.back().first;
  double ymin = points[0].second, ymax = points[0].second;
  for (const auto& [x, y] : points) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  ymin = std::min(ymin, 0.0);
  ymax *= 1.05;

  const auto sx = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  const auto sy = [&](double y) {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open svg for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
      << width - mr << "\" y2=\"" << height - mb
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  // ticks
  const int nticks = 5;
  for (int i = 0; i <= nticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / nticks;
    const double fy = ymin + (ymax - ymin) * i / nticks;
    out << "<line x1=\"" << sx(fx) << "\" y1=\"" << height - mb << "\" x2=\""
        << sx(fx) << "\" y2=\"" << height - mb + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << sx(fx) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"10\">" << static_cast<long long>(std::llround(fx))
        << "</text>\n";
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml
        << "\" y2=\"" << sy(fy) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 3
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << static_cast<long long>(std::llround(fy)) << "</text>\n";
  }
  out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 " << (mt + height - mb) / 2 << ")\">"
      << y_label << "</text>\n";

  // polyline + markers
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& [x, y] : points) out << sx(x) << ',' << sy(y) << ' ';
  out << "\"/>\n";
  for (const auto& [x, y] : points)
    out << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y)
        << "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
  out << "</svg>\n";
}

}  // namespace podracer
