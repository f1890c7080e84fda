#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "warpcal/error.hpp"

namespace warpcal {

/// Generator identifier recorded next to every seeded design.
inline constexpr const char* kDesignAlgorithm = "lhs-jitter/std::mt19937_64";

struct Bounds {
  double lo = 0.0;
  double hi = 1.0;
  double width() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct DesignMatrix {
  std::vector<std::vector<double>> rows;  // N x d
  std::vector<Bounds> bounds;
  std::uint64_t seed = 0;

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return bounds.size(); }
};

/// Latin hypercube: per column a seeded permutation of the N equal-width
/// strata, each point uniformly jittered within its stratum.
inline DesignMatrix lhs_sample(int N, const std::vector<Bounds>& bounds, std::uint64_t seed) {
  require(N >= 1, "lhs_sample: N must be at least 1");
  require(!bounds.empty(), "lhs_sample: at least one dimension is required");
  for (const auto& b : bounds) require(b.lo < b.hi, "lhs_sample: degenerate bounds (lo must be < hi)");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DesignMatrix dm{std::vector<std::vector<double>>(static_cast<std::size_t>(N), std::vector<double>(bounds.size())),
                  bounds, seed};
  std::vector<int> perm(static_cast<std::size_t>(N));
  for (std::size_t d = 0; d < bounds.size(); ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int r = 0; r < N; ++r) {
      const double u = (perm[static_cast<std::size_t>(r)] + unit(rng)) / N;
      // Keep the value strictly inside its stratum after rounding.
      double v = bounds[d].lo + u * bounds[d].width();
      v = std::clamp(v, bounds[d].lo, bounds[d].hi);
      dm.rows[static_cast<std::size_t>(r)][d] = v;
    }
  }
  return dm;
}

/// Stratum index of v in a column with N strata over b.
inline int lhs_stratum(double v, const Bounds& b, int N) {
  const int k = static_cast<int>(std::floor((v - b.lo) / b.width() * N));
  return std::clamp(k, 0, N - 1);
}

}  // namespace warpcal
