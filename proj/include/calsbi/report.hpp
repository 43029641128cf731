#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "calsbi/diagnostics.hpp"
#include "calsbi/io/keyvalue.hpp"

// CSV and SVG artifacts for evaluation runs. Every number goes through
// format_g17, so files are locale-independent and round-trip exactly.
namespace calsbi::report {

using io::format_g17;

inline void write_coverage_csv(std::ostream& os, const std::vector<diagnostics::CoverageCurve>& curves) {
  os << "level,ecp,method,N,L\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.levels.size(); ++k)
      os << format_g17(c.levels[k]) << ',' << format_g17(c.ecp[k]) << ',' << c.method << ',' << c.pairs << ','
         << c.samples << '\n';
}

inline void write_metrics_csv(std::ostream& os, const std::vector<std::pair<std::string, double>>& metrics) {
  os << "name,value\n";
  for (const auto& [name, v] : metrics) os << name << ',' << format_g17(v) << '\n';
}

inline void write_sbc_csv(std::ostream& os, const diagnostics::SbcHistogram& h) {
  os << "bin_lo,bin_hi,count\n";
  const double b = static_cast<double>(h.bins());
  for (std::size_t k = 0; k < h.bins(); ++k)
    os << format_g17(static_cast<double>(k) / b) << ',' << format_g17(static_cast<double>(k + 1) / b) << ','
       << h.counts[k] << '\n';
}

inline void write_segments_csv(std::ostream& os, const std::vector<diagnostics::Interval>& segs) {
  os << "lo,hi\n";
  for (const auto& s : segs) os << format_g17(s.lo) << ',' << format_g17(s.hi) << '\n';
}

// Minimal SVG canvas mapping data coordinates [x0, x1] × [y0, y1] onto a
// fixed pixel frame with a margin for axis labels.
class SvgPlot {
 public:
  SvgPlot(double x0, double x1, double y0, double y1, std::string title)
      : x0_(x0), x1_(x1), y0_(y0), y1_(y1), title_(std::move(title)) {}

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& color,
                const std::string& dash = "") {
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) pts += point(xs[i], ys[i]) + ' ';
    body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"" +
             (dash.empty() ? "" : " stroke-dasharray=\"" + dash + "\"") + " points=\"" + pts + "\"/>\n";
  }

  // Closed region under ys down to y0 between xs.front() and xs.back().
  void area(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& color) {
    if (xs.empty()) return;
    std::string pts = point(xs.front(), y0_) + ' ';
    for (std::size_t i = 0; i < xs.size(); ++i) pts += point(xs[i], ys[i]) + ' ';
    pts += point(xs.back(), y0_);
    body_ += "<polygon fill=\"" + color + "\" fill-opacity=\"0.3\" stroke=\"none\" points=\"" + pts + "\"/>\n";
  }

  void legend(const std::string& text, const std::string& color) {
    const int y = 30 + 16 * legend_rows_++;
    body_ += "<text x=\"" + std::to_string(kLeft + 10) + "\" y=\"" + std::to_string(y) + "\" fill=\"" + color +
             "\" font-size=\"12\">" + text + "</text>\n";
  }

  void write(std::ostream& os, const std::string& xlabel, const std::string& ylabel) const {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
       << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double fx = x0_ + (x1_ - x0_) * k / 4.0, fy = y0_ + (y1_ - y0_) * k / 4.0;
      os << "<text x=\"" << px(fx) << "\" y=\"" << kHeight - kBottom + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
         << tick(fx) << "</text>\n"
         << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
         << tick(fy) << "</text>\n";
    }
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << xlabel << "</text>\n"
       << "<text x=\"14\" y=\"" << kHeight / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << kHeight / 2 << ")\">" << ylabel << "</text>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"16\" font-size=\"13\" text-anchor=\"middle\">" << title_ << "</text>\n"
       << body_ << "</svg>\n";
  }

 private:
  static constexpr int kWidth = 480, kHeight = 400, kLeft = 56, kRight = 16, kTop = 24, kBottom = 44;

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }
  double py(double y) const {
    const double c = std::clamp(y, y0_, y1_);
    return kHeight - kBottom - (c - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom);
  }
  std::string point(double x, double y) const {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f", px(x), py(y));
    return buf;
  }
  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
  }

  double x0_, x1_, y0_, y1_;
  std::string title_;
  std::string body_;
  int legend_rows_ = 0;
};

inline void write_coverage_svg(std::ostream& os, const std::vector<diagnostics::CoverageCurve>& curves) {
  SvgPlot plot(0, 1, 0, 1, "Expected coverage");
  plot.polyline({0, 1}, {0, 1}, "gray", "4 3");
  const char* colors[] = {"#1f77b4", "#d62728"};
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::vector<double> xs{0.0}, ys{0.0};
    xs.insert(xs.end(), curves[i].levels.begin(), curves[i].levels.end());
    ys.insert(ys.end(), curves[i].ecp.begin(), curves[i].ecp.end());
    xs.push_back(1.0);
    ys.push_back(1.0);
    plot.polyline(xs, ys, colors[i % 2]);
    plot.legend(curves[i].method, colors[i % 2]);
  }
  plot.write(os, "credibility level", "empirical coverage");
}

inline void write_demo_svg(std::ostream& os, const diagnostics::DemoReport& r, const Mixture1d& truth,
                           const Mixture1d& approx, double lo, double hi, std::size_t points = 600) {
  std::vector<double> xs(points), black(points), red(points);
  double top = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    black[i] = truth.density(xs[i]);
    red[i] = approx.density(xs[i]);
    top = std::max({top, black[i], red[i]});
  }
  SvgPlot plot(lo, hi, 0, 1.1 * top, "HPDR at level " + io::format_double(r.level) + ", ECP " + io::format_double(r.ecp));
  for (const auto& s : r.segments) {
    std::vector<double> sx, sy;
    for (std::size_t i = 0; i < points; ++i) {
      if (xs[i] < s.lo || xs[i] > s.hi) continue;
      sx.push_back(xs[i]);
      sy.push_back(red[i]);
    }
    plot.area(sx, sy, "#d62728");
  }
  plot.polyline(xs, black, "black");
  plot.polyline(xs, red, "#d62728");
  plot.legend("ground truth", "black");
  plot.legend(r.self_test ? "approximation (= ground truth)" : "approximation", "#d62728");
  plot.write(os, "theta", "density");
}

}  // namespace calsbi::report
