// SPDX-License-Identifier: Apache-2.0
//
// Minimal line-plot renderer producing standalone SVG documents.

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace ghnn::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 640;
  int height = 480;
};

/// Non-finite points split a series into separate polylines.
std::string render(const Plot& plot);

/// Roughly `count` round tick values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int count = 5);

struct Polyline {
  std::string label;
  std::vector<std::pair<double, double>> points;  // pixel coordinates
};

/// Reads back the data polylines from a document produced by render().
std::vector<Polyline> parse_polylines(const std::string& document);

/// Fixed palette indexed cyclically.
std::string palette(std::size_t i);

}  // namespace ghnn::svg
