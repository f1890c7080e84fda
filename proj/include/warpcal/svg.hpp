#pragma once

// Minimal deterministic SVG plots for the report stage.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "warpcal/design.hpp"

namespace warpcal::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

/// Affine map from data coordinates to the plot area (y grows upward in data).
struct PlotFrame {
  Bounds x, y;
  double left = 60, top = 30, width = 360, height = 360;

  double px(double v) const { return left + (v - x.lo) / x.width() * width; }
  double py(double v) const { return top + height - (v - y.lo) / y.width() * height; }
  double total_width() const { return left + width + 30; }
  double total_height() const { return top + height + 50; }
};

class Document {
public:
  Document(double w, double h) : w_(w), h_(h) {}

  void raw(const std::string& s) { body_ += s + "\n"; }

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& extra = "") {
    raw("<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) + "\" fill=\"" +
        fill + "\"" + (extra.empty() ? "" : " " + extra) + "/>");
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double sw = 1.0) {
    raw("<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
        "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(sw) + "\"/>");
  }
  void circle(double cx, double cy, double r, const std::string& fill, const std::string& extra = "") {
    raw("<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"" +
        (extra.empty() ? "" : " " + extra) + "/>");
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "middle", int size = 12) {
    raw("<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
        std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>");
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double sw = 1.0) {
    std::string p;
    for (const auto& [x, y] : pts) p += num(x) + "," + num(y) + " ";
    if (!p.empty()) p.pop_back();
    raw("<polyline points=\"" + p + "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(sw) + "\"/>");
  }

  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
           "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
           body_ + "</svg>\n";
  }

private:
  double w_, h_;
  std::string body_;
};

/// White-to-dark-blue ramp for t in [0,1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - t * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

inline void axes(Document& doc, const PlotFrame& f, const std::string& xlabel, const std::string& ylabel,
                 const std::string& title) {
  doc.raw("<rect x=\"" + num(f.left) + "\" y=\"" + num(f.top) + "\" width=\"" + num(f.width) + "\" height=\"" +
          num(f.height) + "\" fill=\"none\" stroke=\"black\"/>");
  for (int k = 0; k <= 4; ++k) {
    const double xv = f.x.lo + k * f.x.width() / 4, yv = f.y.lo + k * f.y.width() / 4;
    doc.line(f.px(xv), f.top + f.height, f.px(xv), f.top + f.height + 4, "black");
    doc.text(f.px(xv), f.top + f.height + 16, num(xv));
    doc.line(f.left - 4, f.py(yv), f.left, f.py(yv), "black");
    doc.text(f.left - 6, f.py(yv) + 4, num(yv), "end");
  }
  doc.text(f.left + f.width / 2, f.top + f.height + 34, xlabel);
  doc.raw("<text x=\"14\" y=\"" + num(f.top + f.height / 2) + "\" font-family=\"sans-serif\" font-size=\"12\" "
          "text-anchor=\"middle\" transform=\"rotate(-90 14 " + num(f.top + f.height / 2) + ")\">" + escape(ylabel) +
          "</text>");
  doc.text(f.left + f.width / 2, f.top - 10, title, "middle", 13);
}

/// Heatmap of density (rows = y, cols = x) on the frame, with an optional truth marker.
inline std::string heatmap(const Eigen::MatrixXd& density, const PlotFrame& f, std::optional<std::pair<double, double>> truth,
                           const std::string& xlabel, const std::string& ylabel, const std::string& title) {
  Document doc(f.total_width(), f.total_height());
  const int ny = static_cast<int>(density.rows()), nx = static_cast<int>(density.cols());
  const double peak = density.maxCoeff();
  const double cw = f.width / nx, ch = f.height / ny;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double t = peak > 0 ? density(j, i) / peak : 0.0;
      if (t < 0.01) continue;
      doc.rect(f.left + i * cw, f.top + f.height - (j + 1) * ch, cw + 0.05, ch + 0.05, ramp(t));
    }
  axes(doc, f, xlabel, ylabel, title);
  if (truth) {
    const double tx = f.px(truth->first), ty = f.py(truth->second);
    doc.raw("<g id=\"truth\" stroke=\"#d62728\" stroke-width=\"2\"><line x1=\"" + num(tx - 6) + "\" y1=\"" + num(ty - 6) +
            "\" x2=\"" + num(tx + 6) + "\" y2=\"" + num(ty + 6) + "\"/><line x1=\"" + num(tx - 6) + "\" y1=\"" +
            num(ty + 6) + "\" x2=\"" + num(tx + 6) + "\" y2=\"" + num(ty - 6) + "\"/></g>");
  }
  return doc.str();
}

/// Several series on shared axes.
inline std::string line_plot(const std::vector<std::vector<std::pair<double, double>>>& series, const PlotFrame& f,
                             const std::string& xlabel, const std::string& ylabel, const std::string& title) {
  Document doc(f.total_width(), f.total_height());
  axes(doc, f, xlabel, ylabel, title);
  for (const auto& s : series) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : s) pts.emplace_back(f.px(x), f.py(std::clamp(y, f.y.lo, f.y.hi)));
    doc.polyline(pts, "#1f77b4", 0.8);
  }
  return doc.str();
}

struct Interval {
  double x, mid, lo, hi;
};

/// Observed vs predicted with vertical interval bars and the 1:1 line.
inline std::string interval_plot(const std::vector<Interval>& pts, const PlotFrame& f, const std::string& xlabel,
                                 const std::string& ylabel, const std::string& title) {
  Document doc(f.total_width(), f.total_height());
  axes(doc, f, xlabel, ylabel, title);
  const double a = std::max(f.x.lo, f.y.lo), b = std::min(f.x.hi, f.y.hi);
  if (b > a) doc.line(f.px(a), f.py(a), f.px(b), f.py(b), "#999999");
  for (const auto& p : pts) {
    doc.line(f.px(p.x), f.py(std::clamp(p.lo, f.y.lo, f.y.hi)), f.px(p.x), f.py(std::clamp(p.hi, f.y.lo, f.y.hi)),
             "#1f77b4");
    doc.circle(f.px(p.x), f.py(std::clamp(p.mid, f.y.lo, f.y.hi)), 2.5, "#1f77b4");
  }
  return doc.str();
}

}  // namespace warpcal::svg
