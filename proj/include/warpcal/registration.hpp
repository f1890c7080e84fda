#pragma once

// Registration of q-maps by gradient descent over boundary-preserving warps:
//   gamma* = arginf_gamma || q1 - (q2, gamma) ||
// The warp is updated by composition gamma <- gamma o (id + delta v), where v
// is expanded in an L2-orthonormal basis of tangent fields vanishing on the
// boundary of the unit square.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "warpcal/diffeomorphism.hpp"
#include "warpcal/grid_image.hpp"
#include "warpcal/qmap.hpp"

namespace warpcal {

/// One tangent vector field (v1, v2) sampled on the grid.
struct BasisField {
  std::vector<double> v1;
  std::vector<double> v2;
};

struct BasisSet {
  int K = 0;
  GridShape grid;
  std::vector<BasisField> fields;

  std::size_t size() const { return fields.size(); }
};

inline double inner_product(const BasisField& a, const BasisField& b, const std::vector<double>& w) {
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * (a.v1[k] * b.v1[k] + a.v2[k] * b.v2[k]);
  return acc;
}

/// Separable sine fields (phi_ij, 0), (0, phi_ij) with phi_ij = sin(pi i s1) sin(pi j s2),
/// 1 <= i, j <= K, orthonormalized under the trapezoidal L2 inner product.
inline BasisSet build_basis(int K, GridShape grid) {
  require(K >= 1, "build_basis: K must be at least 1");
  require(grid.nx >= kMinGridSize && grid.ny >= kMinGridSize, "build_basis: grid too small");
  const std::size_t nodes = static_cast<std::size_t>(grid.nx) * grid.ny;
  require(2u * static_cast<std::size_t>(K) * K <= nodes,
          "build_basis: 2K^2 = " + std::to_string(2 * K * K) + " exceeds the node count");

  BasisSet basis{K, grid, {}};
  basis.fields.reserve(2u * K * K);
  const auto w = trapezoid_weights(grid);
  for (int axis = 0; axis < 2; ++axis) {
    for (int a = 1; a <= K; ++a) {
      for (int b = 1; b <= K; ++b) {
        BasisField f{std::vector<double>(nodes, 0.0), std::vector<double>(nodes, 0.0)};
        auto& comp = axis == 0 ? f.v1 : f.v2;
        // Boundary nodes stay exactly zero.
        for (int j = 1; j < grid.ny - 1; ++j) {
          const double sy = std::sin(std::numbers::pi * b * j / (grid.ny - 1.0));
          for (int i = 1; i < grid.nx - 1; ++i)
            comp[static_cast<std::size_t>(j) * grid.nx + i] =
                std::sin(std::numbers::pi * a * i / (grid.nx - 1.0)) * sy;
        }
        // Modified Gram-Schmidt.
        for (const auto& prev : basis.fields) {
          const double p = inner_product(f, prev, w);
          for (std::size_t k = 0; k < nodes; ++k) {
            f.v1[k] -= p * prev.v1[k];
            f.v2[k] -= p * prev.v2[k];
          }
        }
        const double norm = std::sqrt(inner_product(f, f, w));
        require(norm > 1e-10, "build_basis: basis is rank deficient on this grid (K too large)");
        for (std::size_t k = 0; k < nodes; ++k) {
          f.v1[k] /= norm;
          f.v2[k] /= norm;
        }
        basis.fields.push_back(std::move(f));
      }
    }
  }
  return basis;
}

/// Displacement field sum_b c_b b as a two-channel image.
inline GridImage basis_displacement(const BasisSet& basis, std::span<const double> coeffs) {
  require(coeffs.size() == basis.size(), "basis_displacement: coefficient count mismatch");
  GridImage v(basis.grid.nx, basis.grid.ny, 2);
  const std::size_t nodes = v.node_count();
  for (std::size_t b = 0; b < basis.size(); ++b) {
    if (coeffs[b] == 0.0) continue;
    for (std::size_t k = 0; k < nodes; ++k) {
      v.values()[2 * k] += coeffs[b] * basis.fields[b].v1[k];
      v.values()[2 * k + 1] += coeffs[b] * basis.fields[b].v2[k];
    }
  }
  return v;
}

/// gamma = id + sum_b c_b b.
inline Diffeomorphism warp_from_coefficients(const BasisSet& basis, std::span<const double> coeffs) {
  return Diffeomorphism::from_displacement(basis_displacement(basis, coeffs));
}

struct RegistrationConfig {
  int K = 8;
  double step0 = 0.1;
  int maxIters = 200;
  double relTol = 1e-6;
  double fdEps = 1e-4;
  AreaNorm areaNorm = AreaNorm::Frobenius;
  // Coarse-to-fine: register Gaussian-blurred images (sigma in cells) in
  // this order before the final pass on the originals.
  std::vector<double> blurSchedule{4.0, 2.0};

  void validate() const {
    require(K >= 1, "RegistrationConfig: K must be >= 1");
    require(step0 > 0.0, "RegistrationConfig: step0 must be > 0");
    require(maxIters >= 1, "RegistrationConfig: maxIters must be >= 1");
    require(relTol > 0.0, "RegistrationConfig: relTol must be > 0");
    require(fdEps > 0.0, "RegistrationConfig: fdEps must be > 0");
    for (double b : blurSchedule) require(b >= 0.0 && std::isfinite(b), "RegistrationConfig: blur widths must be >= 0");
  }
};

struct RegistrationResult {
  Diffeomorphism gamma;
  double dAmp = 0.0;
  double dPhase = 0.0;
  double dEuclid = 0.0;
  std::vector<double> energyTrace;  // energy of every accepted iterate of the final pass
  double initialEnergy = 0.0;       // || q1 - q2 ||^2 at gamma = id
  bool converged = false;
  bool degenerate = false;          // one image has an all-zero q-map
  int iterations = 0;

  /// || q1 - q2 || before any warping.
  double initial_qmap_distance() const { return std::sqrt(initialEnergy); }
};

namespace detail {

/// Evaluates || q1 - (q2, gamma o (id + t v)) ||^2 without allocating.
class EnergyKernel {
public:
  EnergyKernel(const GridImage& q1, const GridImage& q2)
      : q1_(q1), q2_(q2), nx_(q1.nx()), ny_(q1.ny()), n_(q1.channels()),
        weights_(trapezoid_weights(q1.shape())), cx_(q1.node_count()), cy_(q1.node_count()) {}

  /// Energy at gamma itself.
  double energy(const Diffeomorphism& g) {
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        const std::size_t k = static_cast<std::size_t>(j) * nx_ + i;
        cx_[k] = g.x(i, j);
        cy_[k] = g.y(i, j);
      }
    return evaluate();
  }

  /// Energy at gamma o (id + t v); +infinity when det J <= 0 somewhere.
  double energy_composed(const GridImage& gamma, const GridImage& v, double t) {
    compose_into(gamma, v, t);
    return evaluate();
  }

  void compose_into(const GridImage& gamma, const GridImage& v, double t) {
    const auto vv = v.values();
    for (int j = 0; j < ny_; ++j) {
      const double sy = static_cast<double>(j) / (ny_ - 1);
      for (int i = 0; i < nx_; ++i) {
        const std::size_t k = static_cast<std::size_t>(j) * nx_ + i;
        const double px = static_cast<double>(i) / (nx_ - 1) + t * vv[2 * k];
        const double py = sy + t * vv[2 * k + 1];
        sample2(gamma, px, py, cx_[k], cy_[k]);
      }
    }
  }

private:
  static void sample2(const GridImage& f, double x, double y, double& out0, double& out1) {
    const int nx = f.nx(), ny = f.ny();
    const double fx = std::clamp(x, 0.0, 1.0) * (nx - 1);
    const double fy = std::clamp(y, 0.0, 1.0) * (ny - 1);
    const int i0 = std::min(static_cast<int>(fx), nx - 2);
    const int j0 = std::min(static_cast<int>(fy), ny - 2);
    const double tx = fx - i0, ty = fy - j0;
    const double w00 = (1 - tx) * (1 - ty), w10 = tx * (1 - ty), w01 = (1 - tx) * ty, w11 = tx * ty;
    const double* p = f.values().data();
    const std::size_t a = (static_cast<std::size_t>(j0) * nx + i0) * 2;
    const std::size_t b = a + static_cast<std::size_t>(nx) * 2;
    out0 = w00 * p[a] + w10 * p[a + 2] + w01 * p[b] + w11 * p[b + 2];
    out1 = w00 * p[a + 1] + w10 * p[a + 3] + w01 * p[b + 1] + w11 * p[b + 3];
  }

  double det_at(int i, int j) const {
    const double hx = 1.0 / (nx_ - 1), hy = 1.0 / (ny_ - 1);
    const std::size_t k = static_cast<std::size_t>(j) * nx_ + i;
    std::size_t ip = k, im = k, jp = k, jm = k;
    double dx = 2 * hx, dy = 2 * hy;
    if (i == 0) { ip = k + 1; dx = hx; } else if (i == nx_ - 1) { im = k - 1; dx = hx; } else { ip = k + 1; im = k - 1; }
    if (j == 0) { jp = k + nx_; dy = hy; } else if (j == ny_ - 1) { jm = k - nx_; dy = hy; } else { jp = k + nx_; jm = k - nx_; }
    const double a11 = (cx_[ip] - cx_[im]) / dx, a21 = (cy_[ip] - cy_[im]) / dx;
    const double a12 = (cx_[jp] - cx_[jm]) / dy, a22 = (cy_[jp] - cy_[jm]) / dy;
    return a11 * a22 - a12 * a21;
  }

  double evaluate() const {
    const double* q1 = q1_.values().data();
    const double* q2 = q2_.values().data();
    double acc = 0.0;
    for (int j = 0; j < ny_; ++j) {
      for (int i = 0; i < nx_; ++i) {
        const std::size_t k = static_cast<std::size_t>(j) * nx_ + i;
        const double det = det_at(i, j);
        if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
        const double root = std::sqrt(det);
        const double fx = std::clamp(cx_[k], 0.0, 1.0) * (nx_ - 1);
        const double fy = std::clamp(cy_[k], 0.0, 1.0) * (ny_ - 1);
        const int i0 = std::min(static_cast<int>(fx), nx_ - 2);
        const int j0 = std::min(static_cast<int>(fy), ny_ - 2);
        const double tx = fx - i0, ty = fy - j0;
        const double w00 = (1 - tx) * (1 - ty), w10 = tx * (1 - ty), w01 = (1 - tx) * ty, w11 = tx * ty;
        const std::size_t a = (static_cast<std::size_t>(j0) * nx_ + i0) * n_;
        const std::size_t b = a + static_cast<std::size_t>(nx_) * n_;
        double s = 0.0;
        for (int c = 0; c < n_; ++c) {
          const double warped = w00 * q2[a + c] + w10 * q2[a + n_ + c] + w01 * q2[b + c] + w11 * q2[b + n_ + c];
          const double d = q1[k * n_ + c] - root * warped;
          s += d * d;
        }
        acc += weights_[k] * s;
      }
    }
    return acc;
  }

  const GridImage& q1_;
  const GridImage& q2_;
  int nx_, ny_, n_;
  std::vector<double> weights_;
  std::vector<double> cx_, cy_;
};

}  // namespace detail

/// || q1 - (q2, g) ||^2 by trapezoidal quadrature.
inline double registration_energy(const QMapImage& q1, const QMapImage& q2, const Diffeomorphism& g) {
  require_same_layout(q1.q, q2.q, "registration_energy");
  require(g.shape() == q1.shape(), "registration_energy: warp grid differs from image grid");
  require(g.orientation_preserving(), "registration_energy: det J gamma must be positive at every node");
  const GridImage acted = group_action(q2.q, g);
  const double d = l2_distance(q1.q, acted);
  return d * d;
}

/// d_p(gamma) = || Q(gamma_id) - Q(gamma) ||, treating the coordinate maps as two-channel images.
inline double phase_distance(const Diffeomorphism& g, AreaNorm norm = AreaNorm::Frobenius) {
  const QMapImage qg = qmap(g.coords(), norm);
  const QMapImage qid = qmap(Diffeomorphism::identity(g.shape()).coords(), norm);
  return l2_distance(qid.q, qg.q);
}

/// Registers q2 onto q1 by descent from init (identity when absent). The
/// blur schedule is not applied here; dEuclid is left at zero.
inline RegistrationResult register_qmaps(const QMapImage& q1, const QMapImage& q2, const BasisSet& basis,
                                         const RegistrationConfig& cfg, const Diffeomorphism* init = nullptr) {
  cfg.validate();
  require_same_layout(q1.q, q2.q, "register");
  require(basis.grid == q1.shape(), "register: basis grid differs from image grid");

  RegistrationResult res;
  const Diffeomorphism start = init ? *init : Diffeomorphism::identity(q1.shape());
  require(start.shape() == q1.shape(), "register: initial warp grid differs from image grid");
  res.gamma = start;
  detail::EnergyKernel kernel(q1.q, q2.q);
  res.initialEnergy = kernel.energy(Diffeomorphism::identity(q1.shape()));
  double energy = kernel.energy(res.gamma);
  if (!std::isfinite(res.initialEnergy) || !std::isfinite(energy))
    throw ValidationError("register: energy is not finite (NaN in input?)");
  res.energyTrace.push_back(energy);

  const double scale = squared_l2_norm(q1.q) + squared_l2_norm(q2.q);
  if (squared_l2_norm(q1.q) == 0.0 || squared_l2_norm(q2.q) == 0.0) {
    res.degenerate = true;
    res.converged = true;
  } else if (energy <= 1e-28 * scale) {
    res.converged = true;
  } else {
    const std::size_t nb = basis.size();
    std::vector<double> grad(nb);
    GridImage field(q1.q.nx(), q1.q.ny(), 2);
    const std::size_t nodes = field.node_count();

    for (int iter = 0; iter < cfg.maxIters; ++iter) {
      const GridImage& gamma = res.gamma.coords();
      double gnorm2 = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t k = 0; k < nodes; ++k) {
          field.values()[2 * k] = basis.fields[b].v1[k];
          field.values()[2 * k + 1] = basis.fields[b].v2[k];
        }
        const double ep = kernel.energy_composed(gamma, field, cfg.fdEps);
        const double em = kernel.energy_composed(gamma, field, -cfg.fdEps);
        grad[b] = (std::isfinite(ep) && std::isfinite(em)) ? (ep - em) / (2.0 * cfg.fdEps) : 0.0;
        gnorm2 += grad[b] * grad[b];
      }
      if (gnorm2 == 0.0) {
        res.converged = true;
        break;
      }
      const double gnorm = std::sqrt(gnorm2);
      std::vector<double> dir(nb);
      for (std::size_t b = 0; b < nb; ++b) dir[b] = -grad[b] / gnorm;
      const GridImage v = basis_displacement(basis, dir);

      double step = cfg.step0;
      double trial = std::numeric_limits<double>::infinity();
      bool accepted = false;
      for (int halving = 0; halving <= 20; ++halving, step *= 0.5) {
        trial = kernel.energy_composed(gamma, v, step);
        if (std::isnan(trial)) throw ValidationError("register: NaN energy");
        if (trial < energy) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (iter == 0) {
          res.gamma = start;
          res.converged = false;
        } else {
          res.converged = true;  // no descent left at this resolution
        }
        break;
      }

      GridImage next(gamma.nx(), gamma.ny(), 2);
      for (int j = 0; j < gamma.ny(); ++j)
        for (int i = 0; i < gamma.nx(); ++i) {
          const auto p = res.gamma(gamma.coord_x(i) + step * v.at(i, j, 0), gamma.coord_y(j) + step * v.at(i, j, 1));
          next.at(i, j, 0) = p[0];
          next.at(i, j, 1) = p[1];
        }
      res.gamma = Diffeomorphism(std::move(next));
      const double rel = (energy - trial) / energy;
      energy = trial;
      res.energyTrace.push_back(energy);
      res.iterations = iter + 1;
      if (rel < cfg.relTol) {
        res.converged = true;
        break;
      }
    }
  }

  res.dAmp = std::sqrt(res.energyTrace.back());
  res.dPhase = phase_distance(res.gamma, cfg.areaNorm);
  return res;
}

/// Runs the blur schedule, then the final pass on the original images.
inline RegistrationResult register_images(const GridImage& f1, const GridImage& f2, const BasisSet& basis,
                                          const RegistrationConfig& cfg) {
  cfg.validate();
  require_same_layout(f1, f2, "register");
  Diffeomorphism gamma = Diffeomorphism::identity(f1.shape());
  int coarseIters = 0;
  for (double sigma : cfg.blurSchedule) {
    const RegistrationResult stage = register_qmaps(qmap(gaussian_blur(f1, sigma), cfg.areaNorm),
                                                    qmap(gaussian_blur(f2, sigma), cfg.areaNorm), basis, cfg, &gamma);
    if (stage.degenerate) break;
    gamma = stage.gamma;
    coarseIters += stage.iterations;
  }
  RegistrationResult res = register_qmaps(qmap(f1, cfg.areaNorm), qmap(f2, cfg.areaNorm), basis, cfg, &gamma);
  res.iterations += coarseIters;
  res.dEuclid = l2_distance(f1, f2);
  return res;
}

inline RegistrationResult register_images(const GridImage& f1, const GridImage& f2, const RegistrationConfig& cfg) {
  return register_images(f1, f2, build_basis(cfg.K, f1.shape()), cfg);
}

}  // namespace warpcal
