#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "warpcal/error.hpp"

namespace warpcal::stats {

inline constexpr double kZ975 = 1.959963984540054;

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> v, double p) {
  require(!v.empty(), "quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

/// Monte Carlo standard error of the mean by non-overlapping batch means.
inline double batch_means_mcse(std::span<const double> v, std::size_t batches = 50) {
  require(v.size() >= 2 * batches, "batch_means_mcse: chain too short");
  const std::size_t len = v.size() / batches;
  std::vector<double> bm(batches);
  for (std::size_t b = 0; b < batches; ++b) bm[b] = mean(v.subspan(b * len, len));
  return std::sqrt(variance(bm) / static_cast<double>(batches));
}

/// CRPS of a normal forecast N(m, s^2) at observation y.
inline double crps_normal(double m, double s, double y) {
  if (s <= 0.0) return std::abs(y - m);
  const double z = (y - m) / s;
  return s * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

/// CRPS of a lognormal forecast with log-scale parameters (mu, sigma) at y > 0.
inline double crps_lognormal(double mu, double sigma, double y) {
  if (sigma <= 0.0) return std::abs(y - std::exp(mu));
  if (y <= 0.0) return std::exp(mu + 0.5 * sigma * sigma) - y;  // forecast mass lies entirely above y
  const double z = (std::log(y) - mu) / sigma;
  return y * (2.0 * normal_cdf(z) - 1.0) -
         2.0 * std::exp(mu + 0.5 * sigma * sigma) *
             (normal_cdf(z - sigma) + normal_cdf(sigma / std::numbers::sqrt2) - 1.0);
}

}  // namespace warpcal::stats
