#pragma once

// Posterior summaries from MCMC draws: KDE modes, equal-tailed intervals and
// a joint 2-D density on the parameter box.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "warpcal/design.hpp"
#include "warpcal/error.hpp"
#include "warpcal/stats.hpp"

namespace warpcal {

struct MarginalSummary {
  std::string name;
  double mode = 0.0;
  double lower = 0.0;  // 2.5% quantile
  double upper = 0.0;  // 97.5% quantile
  double mean = 0.0;
  double median = 0.0;
  double bandwidth = 0.0;
  std::optional<double> rhat;

  bool covers(double x) const { return x >= lower && x <= upper; }
};

/// Silverman's rule of thumb: 0.9 min(sd, IQR/1.34) n^(-1/5).
inline double silverman_bandwidth(const std::vector<double>& x) {
  require(x.size() >= 2, "silverman_bandwidth: need at least two draws");
  const double sd = std::sqrt(stats::variance(x));
  const double iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
  double s = std::min(sd, iqr / 1.34);
  if (!(s > 0.0)) s = sd;
  return 0.9 * s * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Gaussian KDE evaluated on an evenly spaced grid by linear binning and
/// direct convolution with the binned counts.
inline std::vector<double> kde_on_grid(const std::vector<double>& x, double bw, double lo, double hi, int points) {
  require(points >= 2 && hi > lo, "kde_on_grid: bad grid");
  require(bw > 0.0, "kde_on_grid: bandwidth must be positive");
  const double h = (hi - lo) / (points - 1);
  std::vector<double> counts(static_cast<std::size_t>(points), 0.0);
  std::vector<double> outside;
  for (double v : x) {
    const double f = (v - lo) / h;
    if (f < 0.0 || f > points - 1) {
      outside.push_back(v);
      continue;
    }
    const int i0 = std::min(static_cast<int>(f), points - 2);
    const double t = f - i0;
    counts[i0] += 1.0 - t;
    counts[i0 + 1] += t;
  }
  const double norm = 1.0 / (static_cast<double>(x.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
  const int reach = static_cast<int>(std::ceil(5.0 * bw / h));
  std::vector<double> dens(static_cast<std::size_t>(points), 0.0);
  for (int g = 0; g < points; ++g) {
    double s = 0.0;
    for (int k = std::max(0, g - reach); k <= std::min(points - 1, g + reach); ++k) {
      if (counts[k] == 0.0) continue;
      const double z = (g - k) * h / bw;
      s += counts[k] * std::exp(-0.5 * z * z);
    }
    const double xg = lo + g * h;
    for (double v : outside) {
      const double z = (xg - v) / bw;
      s += std::exp(-0.5 * z * z);
    }
    dens[g] = s * norm;
  }
  return dens;
}

/// Mode from a 512-point KDE over [lo, hi]; ties go to the lower grid value.
inline MarginalSummary summarize_marginal(const std::string& name, const std::vector<double>& draws, double lo,
                                          double hi, int points = 512) {
  require(!draws.empty(), "summarize_marginal: no draws for " + name);
  MarginalSummary m;
  m.name = name;
  m.mean = stats::mean(draws);
  m.median = stats::median(draws);
  m.lower = stats::quantile(draws, 0.025);
  m.upper = stats::quantile(draws, 0.975);
  m.bandwidth = silverman_bandwidth(draws);
  if (!(m.bandwidth > 0.0)) {  // constant chain
    m.mode = draws.front();
    return m;
  }
  if (!std::isfinite(lo)) lo = *std::min_element(draws.begin(), draws.end()) - 3.0 * m.bandwidth;
  if (!std::isfinite(hi)) hi = *std::max_element(draws.begin(), draws.end()) + 3.0 * m.bandwidth;
  const auto dens = kde_on_grid(draws, m.bandwidth, lo, hi, points);
  const auto best = std::max_element(dens.begin(), dens.end());  // first maximum
  m.mode = lo + static_cast<double>(best - dens.begin()) * (hi - lo) / (points - 1);
  return m;
}

/// Joint density of two parameters on a regular grid over a box.
struct DensityGrid {
  Bounds xb, yb;
  int nx = 0, ny = 0;
  Eigen::MatrixXd density;  // (ny, nx), row j is y_j

  double x(int i) const { return xb.lo + i * xb.width() / (nx - 1); }
  double y(int j) const { return yb.lo + j * yb.width() / (ny - 1); }

  /// Peakedness: maximum over mean density on the grid.
  double peak_ratio() const {
    const double mean = density.mean();
    return mean > 0.0 ? density.maxCoeff() / mean : 0.0;
  }
};

/// Product-Gaussian KDE with Scott bandwidths (sd n^(-1/6) per axis),
/// linearly binned and smoothed separably.
inline DensityGrid kde_2d(const std::vector<double>& xs, const std::vector<double>& ys, Bounds xb, Bounds yb,
                          int n = 128) {
  require(xs.size() == ys.size() && xs.size() >= 2, "kde_2d: need matching draws");
  require(n >= 2, "kde_2d: grid too small");
  DensityGrid g;
  g.xb = xb;
  g.yb = yb;
  g.nx = g.ny = n;
  const double nd = static_cast<double>(xs.size());
  const double hx = xb.width() / (n - 1), hy = yb.width() / (n - 1);
  auto bw = [&](const std::vector<double>& v, double h) {
    const double b = std::sqrt(stats::variance(v)) * std::pow(nd, -1.0 / 6.0);
    return std::max(b, 0.5 * h);  // keep a degenerate sample resolvable on the grid
  };
  const double bx = bw(xs, hx), by = bw(ys, hy);

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double fx = std::clamp((xs[k] - xb.lo) / hx, 0.0, n - 1.0);
    const double fy = std::clamp((ys[k] - yb.lo) / hy, 0.0, n - 1.0);
    const int i0 = std::min(static_cast<int>(fx), n - 2), j0 = std::min(static_cast<int>(fy), n - 2);
    const double tx = fx - i0, ty = fy - j0;
    counts(j0, i0) += (1 - tx) * (1 - ty);
    counts(j0, i0 + 1) += tx * (1 - ty);
    counts(j0 + 1, i0) += (1 - tx) * ty;
    counts(j0 + 1, i0 + 1) += tx * ty;
  }
  auto kernel = [&](double b, double h) {
    Eigen::MatrixXd K(n, n);
    for (int a = 0; a < n; ++a)
      for (int c = 0; c < n; ++c) {
        const double z = (a - c) * h / b;
        K(a, c) = std::exp(-0.5 * z * z) / (b * std::sqrt(2.0 * std::numbers::pi));
      }
    return K;
  };
  g.density = kernel(by, hy) * counts * kernel(bx, hx).transpose() / nd;
  return g;
}

inline nlohmann::json to_json(const MarginalSummary& m) {
  nlohmann::json j{{"mode", m.mode}, {"lower95", m.lower}, {"upper95", m.upper}, {"mean", m.mean},
                   {"median", m.median}, {"bandwidth", m.bandwidth}};
  j["rhat"] = m.rhat ? nlohmann::json(*m.rhat) : nlohmann::json(nullptr);
  return j;
}

}  // namespace warpcal
