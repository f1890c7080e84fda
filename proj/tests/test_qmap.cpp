#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "warpcal/data_pipeline.hpp"
#include "warpcal/diffeomorphism.hpp"
#include "warpcal/qmap.hpp"
#include "warpcal/registration.hpp"

using namespace warpcal;
using std::numbers::pi;

namespace {

double sup_diff(const GridImage& a, const GridImage& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.values().size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
  return m;
}

// Warp with the toy formula, sampled exactly at the nodes.
Diffeomorphism toy_gamma(int n, double t1, double t2) {
  return Diffeomorphism(GridImage::from_function(n, n, 2, [&](double x, double y) {
    const auto p = toy_warp_point(x, y, {t1, t2});
    return std::array<double, 2>{p[0], p[1]};
  }));
}

// Redrawn until the warp is orientation preserving.
Diffeomorphism random_basis_warp(const BasisSet& basis, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> c(basis.size());
  for (;;) {
    for (double& v : c) v = u(rng);
    auto g = warp_from_coefficients(basis, c);
    if (g.orientation_preserving()) return g;
  }
}

GridImage smooth_image(int n) {
  return GridImage::from_function(n, n, 2, [](double x, double y) {
    return std::array<double, 2>{std::exp(-8 * ((x - 0.4) * (x - 0.4) + (y - 0.6) * (y - 0.6))), std::sin(pi * x) * y};
  });
}

}  // namespace

TEST(QMap, ConstantImageHasZeroQ) {
  const auto f = GridImage::from_function(12, 12, 1, [](double, double) { return std::array<double, 1>{4.0}; });
  const auto q = qmap(f);
  for (double v : q.q.values()) EXPECT_EQ(v, 0.0);
  for (double a : q.area) EXPECT_EQ(a, 0.0);
}

TEST(QMap, IdentityCoordinates) {
  const auto f = GridImage::from_function(16, 16, 2, [](double x, double y) { return std::array<double, 2>{x, y}; });
  const auto q = qmap(f);
  const double r = std::pow(2.0, 0.25);
  for (int j = 0; j < 16; ++j)
    for (int i = 0; i < 16; ++i) {
      EXPECT_NEAR(q.area[static_cast<std::size_t>(j) * 16 + i], std::sqrt(2.0), 1e-12);
      EXPECT_NEAR(q.q.at(i, j, 0), r * f.at(i, j, 0), 1e-12);
      EXPECT_NEAR(q.q.at(i, j, 1), r * f.at(i, j, 1), 1e-12);
    }
}

TEST(QMap, Homogeneity) {
  const auto f = smooth_image(20);
  const auto q = qmap(f);
  for (double c : {0.25, 2.0, 7.5}) {
    const auto qc = qmap(c * f);
    const double k = std::pow(c, 1.5);
    for (std::size_t n = 0; n < q.q.values().size(); ++n)
      EXPECT_NEAR(qc.q.values()[n], k * q.q.values()[n], 1e-12 * std::max(1.0, std::abs(k * q.q.values()[n])));
  }
}

TEST(QMap, AreaNonNegativeAndZeroWhereQZero) {
  const auto q = qmap(smooth_image(24));
  for (std::size_t k = 0; k < q.area.size(); ++k) {
    EXPECT_GE(q.area[k], 0.0);
    if (q.area[k] == 0.0) {
      EXPECT_EQ(q.q.values()[2 * k], 0.0);
      EXPECT_EQ(q.q.values()[2 * k + 1], 0.0);
    }
  }
}

TEST(Diffeomorphism, IdentityHasUnitDeterminant) {
  const auto id = Diffeomorphism::identity({33, 17});
  for (double d : id.jac_det()) EXPECT_NEAR(d, 1.0, 1e-12);
  EXPECT_TRUE(id.is_identity());
}

TEST(Diffeomorphism, RejectsBoundaryViolation) {
  auto c = Diffeomorphism::identity({10, 10}).coords();
  c.at(0, 4, 0) = 1e-6;
  EXPECT_THROW(Diffeomorphism{c}, ValidationError);
  c.at(0, 4, 0) = 1e-14;  // inside tolerance: snapped
  EXPECT_EQ(Diffeomorphism{c}.x(0, 4), 0.0);
}

TEST(ApplyWarp, IdentityIsExact) {
  const auto f = smooth_image(19);
  const auto out = apply_warp(f, Diffeomorphism::identity(f.shape()));
  EXPECT_EQ(sup_diff(out, f), 0.0);
}

TEST(ApplyWarp, LinearFieldIsExactUnderAnyWarp) {
  const auto f = GridImage::from_function(32, 32, 1, [](double x, double y) { return std::array<double, 1>{0.3 + x - 2 * y}; });
  const auto g = toy_gamma(32, 0.4, -0.3);
  const auto out = apply_warp(f, g);
  for (int j = 0; j < 32; ++j)
    for (int i = 0; i < 32; ++i) EXPECT_NEAR(out.at(i, j), 0.3 + g.x(i, j) - 2 * g.y(i, j), 1e-13);
}

TEST(ApplyWarp, SmoothCheckerboardMatchesAnalyticOracle) {
  const int n = 128;
  auto board = [](double x, double y) { return std::sin(2 * pi * x) * std::sin(2 * pi * y); };
  const auto f = GridImage::from_function(n, n, 1, [&](double x, double y) { return std::array<double, 1>{board(x, y)}; });
  const auto g = toy_gamma(n, 0.3, 0.1);
  const auto out = apply_warp(f, g);
  double err = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) err = std::max(err, std::abs(out.at(i, j) - board(g.x(i, j), g.y(i, j))));
  EXPECT_LT(err, 1e-3);
}

TEST(ApplyWarp, ShapeMismatchRejected) {
  EXPECT_THROW(apply_warp(GridImage(10, 10, 1), Diffeomorphism::identity({11, 10})), ValidationError);
}

TEST(GroupAction, IdentityLeavesQUnchanged) {
  const auto q = qmap(smooth_image(21));
  const auto out = group_action(q, Diffeomorphism::identity(q.shape()));
  EXPECT_LE(sup_diff(out.q, q.q), 1e-12);
}

TEST(GroupAction, PreservesNormForSmallBasisWarps) {
  const int n = 128;
  const auto basis = build_basis(3, {n, n});
  const auto q = qmap(smooth_image(n));
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_basis_warp(basis, rng, 0.03);
    ASSERT_TRUE(g.orientation_preserving());
    const double ratio = l2_norm(group_action(q.q, g)) / l2_norm(q.q);
    EXPECT_GT(ratio, 0.99);
    EXPECT_LT(ratio, 1.01);
  }
}

TEST(GroupAction, ActionOfCompositionMatchesSuccessiveActions) {
  const int n = 128;
  const auto basis = build_basis(2, {n, n});
  const auto q = qmap(smooth_image(n));
  std::mt19937_64 rng(5);
  const auto g1 = random_basis_warp(basis, rng, 0.04);
  const auto g2 = random_basis_warp(basis, rng, 0.04);
  const auto twice = group_action(group_action(q.q, g1), g2);
  const auto once = group_action(q.q, compose(g1, g2));
  EXPECT_LT(sup_diff(twice, once), 1e-2);
}

TEST(GroupAction, RejectsFoldedWarp) {
  auto c = Diffeomorphism::identity({16, 16}).coords();
  std::swap(c.at(5, 5, 0), c.at(7, 5, 0));
  const Diffeomorphism folded{c};
  EXPECT_FALSE(folded.orientation_preserving());
  EXPECT_THROW(group_action(GridImage(16, 16, 1), folded), ValidationError);
}
