#pragma once

// Boundary-preserving coordinate maps of the unit square and their action on
// images and q-maps.

#include <cmath>
#include <string>
#include <vector>

#include "warpcal/grid_image.hpp"
#include "warpcal/qmap.hpp"

namespace warpcal {

inline constexpr double kBoundaryTolerance = 1e-12;

/// gamma : [0,1]^2 -> [0,1]^2 stored as its values at the grid nodes.
/// Each boundary edge maps into itself (the normal coordinate is fixed there).
class Diffeomorphism {
public:
  Diffeomorphism() = default;

  /// Takes gamma as a two-channel GridImage (gamma_1, gamma_2). Boundary
  /// normal coordinates are checked to kBoundaryTolerance and then snapped.
  explicit Diffeomorphism(GridImage coords) : coords_(std::move(coords)) {
    require(coords_.channels() == 2, "Diffeomorphism: coordinates need exactly two channels");
    snap_boundary();
    jac_det_ = compute_jac_det(coords_);
  }

  static Diffeomorphism identity(GridShape g) {
    return Diffeomorphism(GridImage::from_function(g.nx, g.ny, 2, [](double x, double y) {
      return std::array<double, 2>{x, y};
    }));
  }

  /// gamma(s) = s + v(s) for a displacement field v vanishing in its normal
  /// component on the boundary.
  static Diffeomorphism from_displacement(const GridImage& v) {
    require(v.channels() == 2, "Diffeomorphism: displacement needs two channels");
    GridImage c(v.nx(), v.ny(), 2);
    for (int j = 0; j < v.ny(); ++j)
      for (int i = 0; i < v.nx(); ++i) {
        c.at(i, j, 0) = c.coord_x(i) + v.at(i, j, 0);
        c.at(i, j, 1) = c.coord_y(j) + v.at(i, j, 1);
      }
    return Diffeomorphism(std::move(c));
  }

  GridShape shape() const { return coords_.shape(); }
  int nx() const { return coords_.nx(); }
  int ny() const { return coords_.ny(); }
  const GridImage& coords() const { return coords_; }
  double x(int i, int j) const { return coords_.at(i, j, 0); }
  double y(int i, int j) const { return coords_.at(i, j, 1); }
  const std::vector<double>& jac_det() const { return jac_det_; }
  double jac_det(int i, int j) const { return jac_det_[static_cast<std::size_t>(j) * nx() + i]; }

  /// det J gamma > 0 at every node.
  bool orientation_preserving() const {
    for (double d : jac_det_)
      if (!(d > 0.0)) return false;
    return true;
  }

  bool is_identity(double tol = 1e-12) const {
    for (int j = 0; j < ny(); ++j)
      for (int i = 0; i < nx(); ++i)
        if (std::abs(x(i, j) - coords_.coord_x(i)) > tol || std::abs(y(i, j) - coords_.coord_y(j)) > tol)
          return false;
    return true;
  }

  /// Evaluates gamma at an arbitrary point by bilinear interpolation.
  std::array<double, 2> operator()(double s1, double s2) const {
    return {sample_bilinear(coords_, s1, s2, 0), sample_bilinear(coords_, s1, s2, 1)};
  }

  static std::vector<double> compute_jac_det(const GridImage& coords) {
    const JacobianField jac = finite_diff_jacobian(coords);
    std::vector<double> det(coords.node_count());
    for (int j = 0; j < coords.ny(); ++j)
      for (int i = 0; i < coords.nx(); ++i)
        det[static_cast<std::size_t>(j) * coords.nx() + i] =
            jac.d1.at(i, j, 0) * jac.d2.at(i, j, 1) - jac.d2.at(i, j, 0) * jac.d1.at(i, j, 1);
    return det;
  }

private:
  void snap_boundary() {
    const int nx = coords_.nx(), ny = coords_.ny();
    auto fix = [](double& v, double target, const char* edge) {
      if (std::abs(v - target) > kBoundaryTolerance)
        throw ValidationError(std::string("Diffeomorphism: not boundary preserving on ") + edge + " edge");
      v = target;
    };
    for (int j = 0; j < ny; ++j) {
      fix(coords_.at(0, j, 0), 0.0, "left");
      fix(coords_.at(nx - 1, j, 0), 1.0, "right");
    }
    for (int i = 0; i < nx; ++i) {
      fix(coords_.at(i, 0, 1), 0.0, "bottom");
      fix(coords_.at(i, ny - 1, 1), 1.0, "top");
    }
  }

  GridImage coords_;
  std::vector<double> jac_det_;
};

/// (outer o inner)(s) = outer(inner(s)).
inline Diffeomorphism compose(const Diffeomorphism& outer, const Diffeomorphism& inner) {
  require(outer.shape() == inner.shape(), "compose: grid shapes differ");
  GridImage c(inner.nx(), inner.ny(), 2);
  for (int j = 0; j < inner.ny(); ++j)
    for (int i = 0; i < inner.nx(); ++i) {
      const auto p = outer(inner.x(i, j), inner.y(i, j));
      c.at(i, j, 0) = p[0];
      c.at(i, j, 1) = p[1];
    }
  return Diffeomorphism(std::move(c));
}

/// (f o gamma)(s) by bilinear interpolation of f at gamma(s).
inline GridImage apply_warp(const GridImage& f, const Diffeomorphism& g) {
  require(f.shape() == g.shape(), "apply_warp: grid shapes differ");
  GridImage out(f.nx(), f.ny(), f.channels());
  for (int j = 0; j < f.ny(); ++j)
    for (int i = 0; i < f.nx(); ++i)
      for (int c = 0; c < f.channels(); ++c) out.at(i, j, c) = sample_bilinear(f, g.x(i, j), g.y(i, j), c);
  return out;
}

/// (q, gamma) = sqrt(det J gamma) (q o gamma).
inline GridImage group_action(const GridImage& q, const Diffeomorphism& g) {
  require(g.orientation_preserving(), "group_action: det J gamma must be positive at every node");
  GridImage out = apply_warp(q, g);
  for (int j = 0; j < q.ny(); ++j)
    for (int i = 0; i < q.nx(); ++i) {
      const double r = std::sqrt(g.jac_det(i, j));
      for (int c = 0; c < q.channels(); ++c) out.at(i, j, c) *= r;
    }
  return out;
}

inline QMapImage group_action(const QMapImage& q, const Diffeomorphism& g) {
  QMapImage out{group_action(q.q, g), std::vector<double>(q.area.size())};
  // The area factor transforms like a density: a(gamma(s)) det J gamma(s).
  GridImage a(q.q.nx(), q.q.ny(), 1, q.area);
  for (int j = 0; j < q.q.ny(); ++j)
    for (int i = 0; i < q.q.nx(); ++i)
      out.area[static_cast<std::size_t>(j) * q.q.nx() + i] =
          std::max(0.0, sample_bilinear(a, g.x(i, j), g.y(i, j), 0)) * g.jac_det(i, j);
  return out;
}

}  // namespace warpcal
