#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "warpcal/data_pipeline.hpp"

using namespace warpcal;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("warpcal_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

JumpField uniform_field(int nx, int ny, double un, double ut, double alpha) {
  JumpField j;
  j.nx = nx;
  j.ny = ny;
  j.un.assign(j.size(), un);
  j.ut.assign(j.size(), ut);
  j.alpha.assign(j.size(), alpha);
  j.mask.assign(j.size(), 1);
  return j;
}

}  // namespace

TEST(ToyWarp, ZeroParametersIsIdentity) {
  for (double x : {0.0, 0.2, 0.77, 1.0})
    for (double y : {0.0, 0.5, 0.91, 1.0}) {
      const auto p = toy_warp_point(x, y, {0.0, 0.0});
      EXPECT_EQ(p[0], x);
      EXPECT_EQ(p[1], y);
    }
}

TEST(ToyWarp, BoundaryFixedForAllParameters) {
  for (double t1 : {-0.5, -0.1, 0.3, 0.5})
    for (double t2 : {-0.5, 0.1, 0.5})
      for (int k = 0; k <= 50; ++k) {
        const double s = k / 50.0;
        for (const auto& pt : {std::array<double, 2>{0.0, s}, std::array<double, 2>{1.0, s}, std::array<double, 2>{s, 0.0},
                               std::array<double, 2>{s, 1.0}}) {
          const auto w = toy_warp_point(pt[0], pt[1], {t1, t2});
          EXPECT_NEAR(w[0], pt[0], 1e-12);
          EXPECT_NEAR(w[1], pt[1], 1e-12);
        }
      }
}

TEST(ToyWarp, CentreValueAtSyntheticTruth) {
  // Independent scalar evaluation: sin(0.5)^2 = 0.229849, cos(pi/2)+1 = 1,
  // cos(pi/4) cos(3pi/4) = -0.5, so
  //   s1' = 0.5 - 2(0.3)(0.5)(0.229849) = 0.431045
  //   s2' = 0.5 + 2(0.1)(0.5)(0.229849)(-0.5) = 0.488508
  const auto w = toy_warp_point(0.5, 0.5, {0.3, 0.1});
  EXPECT_NEAR(w[0], 0.43105, 5e-6);
  EXPECT_NEAR(w[1], 0.48851, 5e-6);
}

TEST(ToyParams, BoundsEnforced) {
  EXPECT_THROW((ToyParams{0.6, 0.0}.validate()), ValidationError);
  EXPECT_NO_THROW((ToyParams{-0.5, 0.5}.validate()));
}

TEST(Template, DeterministicAndNormalized) {
  const auto a = make_template("branching_crack", {64, 64});
  const auto b = make_template("branching_crack", {64, 64});
  double mx = -1.0, mn = 2.0;
  int support = 0;
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    EXPECT_EQ(a.values()[k], b.values()[k]);
    mx = std::max(mx, a.values()[k]);
    mn = std::min(mn, a.values()[k]);
    support += a.values()[k] > 0.0;
  }
  EXPECT_EQ(mx, 1.0);
  EXPECT_EQ(mn, 0.0);
  const double frac = support / (64.0 * 64.0);
  EXPECT_GE(frac, 0.02);
  EXPECT_LE(frac, 0.20);
  EXPECT_THROW(make_template("checkerboard", {64, 64}), ValidationError);
}

TEST(ToyRun, ZeroParametersReproduceTemplate) {
  const auto t = make_template("branching_crack", {48, 48});
  const auto y = generate_toy_run(t, {0.0, 0.0});
  for (std::size_t k = 0; k < t.values().size(); ++k) EXPECT_NEAR(y.values()[k], t.values()[k], 1e-14);
}

TEST(ToyRun, BoundaryRowsAndColumnsUnchanged) {
  const auto t = GridImage::from_function(40, 40, 1, [](double x, double y) { return std::array<double, 1>{x * x + std::sin(3 * y)}; });
  const auto y = generate_toy_run(t, {0.45, -0.35});
  for (int k = 0; k < 40; ++k) {
    EXPECT_NEAR(y.at(0, k), t.at(0, k), 1e-12);
    EXPECT_NEAR(y.at(39, k), t.at(39, k), 1e-12);
    EXPECT_NEAR(y.at(k, 0), t.at(k, 0), 1e-12);
    EXPECT_NEAR(y.at(k, 39), t.at(k, 39), 1e-12);
  }
}

TEST(ToyRun, DistinctParametersDifferAndSmallStepsBarelyMove) {
  const auto t = make_template("branching_crack", {64, 64});
  const auto y1 = generate_toy_run(t, {0.2, 0.1}), y2 = generate_toy_run(t, {0.3, -0.2});
  EXPECT_GT(l2_distance(y1, y2), 0.0);
  const auto y3 = generate_toy_run(t, {0.201, 0.101});
  EXPECT_LT(l2_distance(y1, y3), 1e-2 * l2_norm(y1));
}

TEST(Recipe, ParseAndPrint) {
  for (const char* s : {"mag-angle", "grad", "grad-angle"}) EXPECT_EQ(to_string(parse_recipe(s)), s);
  EXPECT_THROW(parse_recipe("gradient"), ValidationError);
  EXPECT_THROW((ImageRecipe{RecipeVariant::GradientOnly, -1.0}.validate()), ValidationError);
}

TEST(Recipe, ConstantMagnitudeGradientIsZero) {
  const auto img = build_image_unscaled(uniform_field(12, 12, 1.0, 0.5, 0.3), {RecipeVariant::GradientOnly, 0.4});
  ASSERT_EQ(img.channels(), 2);
  for (double v : img.values()) EXPECT_EQ(v, 0.0);
}

TEST(Recipe, ThresholdDropsSmallOpenings) {
  const auto img = build_image_unscaled(uniform_field(10, 10, 0.3, 0.0, 1.0), {RecipeVariant::MagnitudeAngle, 0.4});
  for (double v : img.values()) EXPECT_EQ(v, 0.0);
}

TEST(Recipe, PythagoreanMagnitudeSurvives) {
  const auto img = build_image_unscaled(uniform_field(10, 10, 0.3, 0.4, 1.25), {RecipeVariant::MagnitudeAngle, 0.4});
  for (int j = 0; j < 10; ++j)
    for (int i = 0; i < 10; ++i) {
      EXPECT_NEAR(img.at(i, j, 0), 0.5, 1e-15);
      EXPECT_EQ(img.at(i, j, 1), 1.25);
    }
}

TEST(Recipe, ChannelsPerVariant) {
  auto j = uniform_field(16, 16, 0.0, 0.0, 0.0);
  for (int i = 4; i < 12; ++i) j.un[j.index(i, 8)] = 1.0, j.alpha[j.index(i, 8)] = 0.7;
  EXPECT_EQ(build_image_unscaled(j, {RecipeVariant::MagnitudeAngle, 0.4}).channels(), 2);
  EXPECT_EQ(build_image_unscaled(j, {RecipeVariant::GradientOnly, 0.4}).channels(), 2);
  const auto ga = build_image_unscaled(j, {RecipeVariant::GradientAngle, 0.4});
  ASSERT_EQ(ga.channels(), 3);
  EXPECT_EQ(ga.at(5, 8, 2), 0.7);
  EXPECT_NEAR(ga.at(5, 9, 1), -1.0 / (2.0 / 15.0), 1e-12);  // central difference across the ridge
}

TEST(Recipe, MaskedCellsBecomeZero) {
  auto j = uniform_field(10, 10, 1.0, 0.0, 0.5);
  j.mask[j.index(3, 3)] = 0;
  j.un[j.index(3, 3)] = std::numeric_limits<double>::quiet_NaN();
  const auto img = build_image_unscaled(j, {RecipeVariant::MagnitudeAngle, 0.4});
  EXPECT_EQ(img.at(3, 3, 0), 0.0);
  EXPECT_EQ(img.at(3, 3, 1), 0.0);
  EXPECT_EQ(img.at(4, 3, 0), 1.0);
}

TEST(Recipe, ThresholdingIsIdempotent) {
  auto j = uniform_field(12, 12, 0.2, 0.0, 0.1);
  for (int i = 0; i < 12; ++i) j.un[j.index(i, 5)] = 0.9;
  const auto once = threshold_jump_field(j, 0.4);
  const auto twice = threshold_jump_field(once, 0.4);
  EXPECT_EQ(once.un, twice.un);
  EXPECT_EQ(once.alpha, twice.alpha);
}

TEST(Recipe, ReferenceScaledToUnitNormPerChannel) {
  auto j = uniform_field(20, 20, 0.0, 0.0, 0.0);
  for (int i = 2; i < 18; ++i) j.un[j.index(i, 10)] = 2.0 + 0.1 * i, j.alpha[j.index(i, 10)] = 1.1;
  const ImageRecipe r{RecipeVariant::GradientAngle, 0.4};
  const auto [ref, scale] = build_reference_image(j, r);
  for (int c = 0; c < ref.channels(); ++c) EXPECT_NEAR(l2_norm(ref.channel(c)), 1.0, 1e-10);
  // the same factors apply to another image in the batch
  const auto other = build_image(j, r, scale);
  for (std::size_t k = 0; k < ref.values().size(); ++k) EXPECT_EQ(other.values()[k], ref.values()[k]);
}

TEST(JumpFieldIO, RoundTrip) {
  const auto dir = scratch("roundtrip");
  auto j = uniform_field(11, 9, 0.0, 0.0, 0.0);
  for (std::size_t k = 0; k < j.size(); ++k) j.un[k] = std::sin(0.37 * k), j.ut[k] = 1.0 / (k + 3.0), j.alpha[k] = 0.01 * k;
  j.mask[4] = 0;
  write_jump_field(dir, j);
  const auto back = ingest_jump_field(dir);
  EXPECT_EQ(back.un, j.un);
  EXPECT_EQ(back.ut, j.ut);
  EXPECT_EQ(back.alpha, j.alpha);
  EXPECT_EQ(back.mask, j.mask);
  fs::remove_all(dir);
}

TEST(JumpFieldIO, NanInValidCellNamesLocation) {
  const auto dir = scratch("nan");
  auto j = uniform_field(10, 10, 1.0, 0.0, 0.0);
  j.ut[j.index(6, 2)] = std::numeric_limits<double>::quiet_NaN();
  write_jump_field(dir, j);
  try {
    ingest_jump_field(dir);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(i=6, j=2)"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(JumpFieldIO, AllMaskedAndMissingChannel) {
  const auto dir = scratch("masked");
  auto j = uniform_field(10, 10, 1.0, 0.0, 0.0);
  j.mask.assign(j.size(), 0);
  write_jump_field(dir, j);
  try {
    ingest_jump_field(dir);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("masked out"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);

  FieldData d = FieldData::from_image(GridImage(8, 8, 3), {"un", "ut", "alpha"});
  write_field(dir, d);
  EXPECT_THROW(ingest_jump_field(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(JumpFieldIO, BeaufortGridMapsToUnitSquare) {
  // 10 km cells over [-2345,-1505] x [-260,730] km: 84 x 99 cells.
  const auto dir = scratch("beaufort");
  auto j = uniform_field(84, 99, 0.0, 0.0, 0.0);
  for (int i = 10; i < 70; ++i) j.un[j.index(i, 50)] = 1.0;
  write_jump_field(dir, j, {{"extent_km", {-2345, -1505, -260, 730}}});
  const auto back = ingest_jump_field(dir);
  EXPECT_EQ(back.nx, 84);
  EXPECT_EQ(back.ny, 99);
  const auto img = build_image_unscaled(back, {RecipeVariant::MagnitudeAngle, 0.4});
  EXPECT_DOUBLE_EQ(img.coord_x(83), 1.0);
  EXPECT_DOUBLE_EQ(img.coord_y(98), 1.0);
  EXPECT_DOUBLE_EQ(img.spacing_x(), 1.0 / 83);
  fs::remove_all(dir);
}
