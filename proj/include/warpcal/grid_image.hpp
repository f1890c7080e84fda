#pragma once

// Multichannel images sampled on a regular grid over the unit square, with
// finite-difference Jacobians, trapezoidal L2 geometry and bilinear sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "warpcal/error.hpp"

namespace warpcal {

inline constexpr int kMinGridSize = 8;

struct GridShape {
  int nx = 0;
  int ny = 0;
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// f : [0,1]^2 -> R^n sampled at s_i = i/(nx-1), s_j = j/(ny-1).
/// Storage is node-major: value(i, j, c) lives at ((j * nx) + i) * n + c.
class GridImage {
public:
  GridImage() = default;

  GridImage(int nx, int ny, int channels) : nx_(nx), ny_(ny), channels_(channels) {
    check_shape();
    values_.assign(static_cast<std::size_t>(nx) * ny * channels, 0.0);
  }

  GridImage(int nx, int ny, int channels, std::vector<double> values)
      : nx_(nx), ny_(ny), channels_(channels), values_(std::move(values)) {
    check_shape();
    require(values_.size() == static_cast<std::size_t>(nx) * ny * channels,
            "GridImage: value count does not match nx*ny*channels");
    validate();
  }

  /// Evaluates fn(s1, s2) -> std::array/vector-like of size channels at every node.
  template <typename Fn>
  static GridImage from_function(int nx, int ny, int channels, Fn&& fn) {
    GridImage img(nx, ny, channels);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const auto v = fn(img.coord_x(i), img.coord_y(j));
        for (int c = 0; c < channels; ++c) img.at(i, j, c) = v[static_cast<std::size_t>(c)];
      }
    }
    return img;
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int channels() const { return channels_; }
  GridShape shape() const { return {nx_, ny_}; }
  std::size_t node_count() const { return static_cast<std::size_t>(nx_) * ny_; }
  bool empty() const { return values_.empty(); }

  double coord_x(int i) const { return static_cast<double>(i) / (nx_ - 1); }
  double coord_y(int j) const { return static_cast<double>(j) / (ny_ - 1); }
  double spacing_x() const { return 1.0 / (nx_ - 1); }
  double spacing_y() const { return 1.0 / (ny_ - 1); }

  std::size_t index(int i, int j, int c = 0) const {
    return (static_cast<std::size_t>(j) * nx_ + i) * channels_ + c;
  }
  double& at(int i, int j, int c = 0) { return values_[index(i, j, c)]; }
  double at(int i, int j, int c = 0) const { return values_[index(i, j, c)]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  /// Throws ValidationError naming the first non-finite node.
  void validate() const {
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i)
        for (int c = 0; c < channels_; ++c)
          if (!std::isfinite(at(i, j, c)))
            throw ValidationError("GridImage: non-finite value at (i=" + std::to_string(i) +
                                  ", j=" + std::to_string(j) + ", c=" + std::to_string(c) + ")");
  }

  GridImage channel(int c) const {
    GridImage out(nx_, ny_, 1);
    for (std::size_t k = 0; k < node_count(); ++k) out.values_[k] = values_[k * channels_ + c];
    return out;
  }

  GridImage& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  friend GridImage operator*(double s, GridImage img) { return img *= s; }

private:
  void check_shape() const {
    require(nx_ >= kMinGridSize && ny_ >= kMinGridSize,
            "GridImage: grid must be at least " + std::to_string(kMinGridSize) + " nodes per axis");
    require(channels_ >= 1, "GridImage: channel count must be positive");
  }

  int nx_ = 0;
  int ny_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

inline void require_same_grid(const GridImage& a, const GridImage& b, const char* where) {
  require(a.shape() == b.shape(), std::string(where) + ": grid shapes differ");
}

inline void require_same_layout(const GridImage& a, const GridImage& b, const char* where) {
  require_same_grid(a, b, where);
  require(a.channels() == b.channels(), std::string(where) + ": channel counts differ");
}

/// Trapezoidal quadrature weight of node (i, j) on the unit square.
inline double trapezoid_weight(GridShape g, int i, int j) {
  const double wx = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
  const double wy = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
  return wx * wy / ((g.nx - 1.0) * (g.ny - 1.0));
}

inline std::vector<double> trapezoid_weights(GridShape g) {
  std::vector<double> w(static_cast<std::size_t>(g.nx) * g.ny);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) w[static_cast<std::size_t>(j) * g.nx + i] = trapezoid_weight(g, i, j);
  return w;
}

inline double squared_l2_norm(const GridImage& f) {
  double acc = 0.0;
  const int n = f.channels();
  for (int j = 0; j < f.ny(); ++j)
    for (int i = 0; i < f.nx(); ++i) {
      double s = 0.0;
      for (int c = 0; c < n; ++c) s += f.at(i, j, c) * f.at(i, j, c);
      acc += trapezoid_weight(f.shape(), i, j) * s;
    }
  return acc;
}

inline double l2_norm(const GridImage& f) { return std::sqrt(squared_l2_norm(f)); }

/// sqrt of the trapezoidal integral of |f1 - f2|^2 over the unit square.
inline double l2_distance(const GridImage& f1, const GridImage& f2) {
  require_same_layout(f1, f2, "l2_distance");
  double acc = 0.0;
  const int n = f1.channels();
  for (int j = 0; j < f1.ny(); ++j)
    for (int i = 0; i < f1.nx(); ++i) {
      double s = 0.0;
      for (int c = 0; c < n; ++c) {
        const double d = f1.at(i, j, c) - f2.at(i, j, c);
        s += d * d;
      }
      acc += trapezoid_weight(f1.shape(), i, j) * s;
    }
  return std::sqrt(acc);
}

/// Partial derivatives of every channel: d1 = df/ds1, d2 = df/ds2.
struct JacobianField {
  GridImage d1;
  GridImage d2;

  /// n x 2 Jacobian at node (i, j).
  Eigen::MatrixX2d matrix(int i, int j) const {
    Eigen::MatrixX2d m(d1.channels(), 2);
    for (int c = 0; c < d1.channels(); ++c) {
      m(c, 0) = d1.at(i, j, c);
      m(c, 1) = d2.at(i, j, c);
    }
    return m;
  }
};

namespace detail {

// Central differences in the interior, one-sided first-order at the ends.
inline double diff_along(std::span<const double> v, std::size_t stride, int k, int n, double h) {
  if (k == 0) return (v[stride] - v[0]) / h;
  if (k == n - 1) return (v[(n - 1) * stride] - v[(n - 2) * stride]) / h;
  return (v[(k + 1) * stride] - v[(k - 1) * stride]) / (2.0 * h);
}

}  // namespace detail

inline JacobianField finite_diff_jacobian(const GridImage& f) {
  f.validate();
  const int nx = f.nx(), ny = f.ny(), n = f.channels();
  JacobianField jac{GridImage(nx, ny, n), GridImage(nx, ny, n)};
  const double hx = f.spacing_x(), hy = f.spacing_y();
  const auto v = f.values();
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      for (int c = 0; c < n; ++c) {
        const std::size_t row_start = f.index(0, j, c);
        const std::size_t col_start = f.index(i, 0, c);
        jac.d1.at(i, j, c) = detail::diff_along(v.subspan(row_start), static_cast<std::size_t>(n), i, nx, hx);
        jac.d2.at(i, j, c) =
            detail::diff_along(v.subspan(col_start), static_cast<std::size_t>(n) * nx, j, ny, hy);
      }
  return jac;
}

/// Bilinear sample of channel c at (x, y); coordinates are clamped to [0,1]^2.
inline double sample_bilinear(const GridImage& f, double x, double y, int c) {
  const int nx = f.nx(), ny = f.ny();
  const double fx = std::clamp(x, 0.0, 1.0) * (nx - 1);
  const double fy = std::clamp(y, 0.0, 1.0) * (ny - 1);
  const int i0 = std::min(static_cast<int>(fx), nx - 2);
  const int j0 = std::min(static_cast<int>(fy), ny - 2);
  const double tx = fx - i0, ty = fy - j0;
  const double v00 = f.at(i0, j0, c), v10 = f.at(i0 + 1, j0, c);
  const double v01 = f.at(i0, j0 + 1, c), v11 = f.at(i0 + 1, j0 + 1, c);
  return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
}

/// Separable Gaussian blur with standard deviation sigma in grid cells;
/// edges are handled by renormalizing the truncated kernel. sigma <= 0 copies.
inline GridImage gaussian_blur(const GridImage& f, double sigma) {
  if (!(sigma > 0.0)) return f;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int t = -r; t <= r; ++t) k[t + r] = std::exp(-0.5 * (t / sigma) * (t / sigma));
  const int nx = f.nx(), ny = f.ny(), n = f.channels();
  GridImage tmp(nx, ny, n), out(nx, ny, n);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      for (int c = 0; c < n; ++c) {
        double s = 0.0, w = 0.0;
        for (int t = std::max(-r, -i); t <= std::min(r, nx - 1 - i); ++t) {
          s += k[t + r] * f.at(i + t, j, c);
          w += k[t + r];
        }
        tmp.at(i, j, c) = s / w;
      }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      for (int c = 0; c < n; ++c) {
        double s = 0.0, w = 0.0;
        for (int t = std::max(-r, -j); t <= std::min(r, ny - 1 - j); ++t) {
          s += k[t + r] * tmp.at(i, j + t, c);
          w += k[t + r];
        }
        out.at(i, j, c) = s / w;
      }
  return out;
}

}  // namespace warpcal
