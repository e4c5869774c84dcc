// SPDX-License-Identifier: Apache-2.0

#include "ghnn/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <regex>
#include <sstream>

namespace ghnn::svg {

namespace {

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      const double pad = std::max(1e-3, 0.05 * std::abs(hi));
      lo -= pad;
      hi += pad;
    }
  }
};

}  // namespace

std::string palette(std::size_t i) {
  static const std::array<const char*, 6> colors{"#1f77b4", "#d62728", "#2ca02c",
                                                 "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % colors.size()];
}

std::vector<double> nice_ticks(double lo, double hi, int count) {
  if (!(hi > lo) || count < 1) return {lo};
  const double raw = (hi - lo) / count;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) ticks.push_back(t);
  return ticks;
}

std::string render(const Plot& plot) {
  const double w = plot.width, h = plot.height;
  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = w - left - right, ph = h - top - bottom;

  Range xr, yr;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        xr.add(s.x[i]);
        yr.add(s.y[i]);
      }
    }
  }
  xr.finish();
  yr.finish();
  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return top + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\""
     << plot.height << "\" viewBox=\"0 0 " << plot.width << ' ' << plot.height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << num(w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(plot.title) << "</text>\n";
  os << "<rect class=\"frame\" x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\""
     << num(pw) << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double t : nice_ticks(xr.lo, xr.hi)) {
    const double x = px(t);
    os << "<line class=\"tick\" x1=\"" << num(x) << "\" y1=\"" << num(top + ph) << "\" x2=\""
       << num(x) << "\" y2=\"" << num(top + ph + 5) << "\" stroke=\"black\"/>"
       << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 18)
       << "\" text-anchor=\"middle\">" << tick_label(t) << "</text>\n";
  }
  for (double t : nice_ticks(yr.lo, yr.hi)) {
    const double y = py(t);
    os << "<line class=\"tick\" x1=\"" << num(left - 5) << "\" y1=\"" << num(y) << "\" x2=\""
       << num(left) << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>"
       << "<text x=\"" << num(left - 8) << "\" y=\"" << num(y + 4)
       << "\" text-anchor=\"end\">" << tick_label(t) << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(h - 12)
     << "\" text-anchor=\"middle\">" << escape(plot.x_label) << "</text>\n";
  os << "<text transform=\"translate(16 " << num(top + ph / 2) << ") rotate(-90)\" "
     << "text-anchor=\"middle\">" << escape(plot.y_label) << "</text>\n";

  os << "<g clip-path=\"none\">\n";
  for (const auto& s : plot.series) {
    std::vector<std::string> runs(1);
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        if (!runs.back().empty()) runs.emplace_back();
        continue;
      }
      if (!runs.back().empty()) runs.back() += ' ';
      runs.back() += num(px(s.x[i])) + "," + num(py(s.y[i]));
    }
    for (const auto& pts : runs) {
      if (pts.empty()) continue;
      os << "<polyline data-label=\"" << escape(s.label) << "\" fill=\"none\" stroke=\"" << s.color
         << "\" stroke-width=\"1.5\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
         << " points=\"" << pts << "\"/>\n";
    }
  }
  os << "</g>\n";

  double ly = top + 16;
  for (const auto& s : plot.series) {
    if (s.label.empty()) continue;
    os << "<line x1=\"" << num(left + pw - 150) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
       << num(left + pw - 126) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << s.color
       << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>"
       << "<text x=\"" << num(left + pw - 120) << "\" y=\"" << num(ly) << "\">" << escape(s.label)
       << "</text>\n";
    ly += 16;
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

std::vector<Polyline> parse_polylines(const std::string& doc) {
  static const std::regex line(R"re(<polyline data-label="([^"]*)"[^>]* points="([^"]*)")re");
  std::vector<Polyline> out;
  for (std::sregex_iterator it(doc.begin(), doc.end(), line), end; it != end; ++it) {
    Polyline p;
    p.label = (*it)[1];
    std::istringstream pts((*it)[2]);
    std::string pair;
    while (pts >> pair) {
      const auto comma = pair.find(',');
      p.points.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ghnn::svg
