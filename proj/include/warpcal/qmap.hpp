#pragma once

#include <cmath>
#include <vector>

#include "warpcal/grid_image.hpp"

namespace warpcal {

/// Norm used for the area multiplication factor a(s) = ||Jf(s)||.
enum class AreaNorm {
  Frobenius,  // sqrt(sum of squared Jacobian entries)
  Wedge,      // |df/ds1 ^ df/ds2| = sqrt(det(J^T J)); exact under reparametrization
};

/// q(s) = sqrt(a(s)) f(s), together with a(s).
struct QMapImage {
  GridImage q;
  std::vector<double> area;

  GridShape shape() const { return q.shape(); }
};

inline QMapImage qmap(const GridImage& f, AreaNorm norm = AreaNorm::Frobenius) {
  const JacobianField jac = finite_diff_jacobian(f);
  const int nx = f.nx(), ny = f.ny(), n = f.channels();
  QMapImage out{GridImage(nx, ny, n), std::vector<double>(f.node_count(), 0.0)};
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double a = 0.0;
      if (norm == AreaNorm::Frobenius) {
        for (int c = 0; c < n; ++c) {
          const double g1 = jac.d1.at(i, j, c), g2 = jac.d2.at(i, j, c);
          a += g1 * g1 + g2 * g2;
        }
        a = std::sqrt(a);
      } else {
        double e = 0.0, fcoef = 0.0, g = 0.0;
        for (int c = 0; c < n; ++c) {
          const double g1 = jac.d1.at(i, j, c), g2 = jac.d2.at(i, j, c);
          e += g1 * g1;
          fcoef += g1 * g2;
          g += g2 * g2;
        }
        a = std::sqrt(std::max(0.0, e * g - fcoef * fcoef));
      }
      out.area[static_cast<std::size_t>(j) * nx + i] = a;
      const double root = std::sqrt(a);
      for (int c = 0; c < n; ++c) out.q.at(i, j, c) = root * f.at(i, j, c);
    }
  }
  return out;
}

}  // namespace warpcal
