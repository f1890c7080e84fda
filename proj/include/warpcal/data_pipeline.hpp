#pragma once

// Jump fields, the three image recipes built from them, and the synthetic
// toy experiment (template + parametric boundary-preserving warp).

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "warpcal/diffeomorphism.hpp"
#include "warpcal/field_io.hpp"
#include "warpcal/grid_image.hpp"

namespace warpcal {

// ---------------------------------------------------------------------------
// Toy experiment

struct ToyParams {
  double theta1 = 0.0;
  double theta2 = 0.0;

  static constexpr double kLower = -0.5;
  static constexpr double kUpper = 0.5;

  void validate() const {
    require(theta1 >= kLower && theta1 <= kUpper && theta2 >= kLower && theta2 <= kUpper,
            "ToyParams: theta outside [-0.5, 0.5]^2");
  }
};

/// s' = W_theta(s):
///   s1' = s1 - 2 theta1 s2 sin(s1) sin(s2) (cos(pi s1) + 1)(cos(pi s2) + 1)
///   s2' = s2 + 2 theta2 s1 sin(s1) sin(s2) cos(pi s1 / 2) cos(3 pi s2 / 2)
inline std::array<double, 2> toy_warp_point(double s1, double s2, const ToyParams& p) {
  using std::numbers::pi;
  const double common = std::sin(s1) * std::sin(s2);
  const double x = s1 - 2.0 * p.theta1 * s2 * common * (std::cos(pi * s1) + 1.0) * (std::cos(pi * s2) + 1.0);
  const double y = s2 + 2.0 * p.theta2 * s1 * common * std::cos(pi / 2.0 * s1) * std::cos(3.0 / 2.0 * pi * s2);
  return {x, y};
}

/// Model output Y(theta): the template pulled back through W_theta.
inline GridImage generate_toy_run(const GridImage& tmpl, const ToyParams& p) {
  p.validate();
  tmpl.validate();
  GridImage out(tmpl.nx(), tmpl.ny(), tmpl.channels());
  for (int j = 0; j < tmpl.ny(); ++j)
    for (int i = 0; i < tmpl.nx(); ++i) {
      const auto w = toy_warp_point(tmpl.coord_x(i), tmpl.coord_y(j), p);
      for (int c = 0; c < tmpl.channels(); ++c) out.at(i, j, c) = sample_bilinear(tmpl, w[0], w[1], c);
    }
  return out;
}

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

using Polyline = std::vector<std::array<double, 2>>;

inline Polyline branching_crack_main(int samples) {
  Polyline pts;
  for (int k = 0; k <= samples; ++k) {
    const double x = static_cast<double>(k) / samples;
    pts.push_back({x, 0.62 - 0.25 * x + 0.07 * std::sin(2.0 * std::numbers::pi * x)});
  }
  return pts;
}

inline Polyline branching_crack_branch(int samples) {
  // Quadratic Bezier leaving the main curve at s1 = 0.55 toward the lower-right corner.
  const double x0 = 0.55, y0 = 0.62 - 0.25 * x0 + 0.07 * std::sin(2.0 * std::numbers::pi * x0);
  const std::array<double, 2> p0{x0, y0}, p1{0.72, 0.36}, p2{0.82, 0.16};
  Polyline pts;
  for (int k = 0; k <= samples; ++k) {
    const double t = static_cast<double>(k) / samples;
    const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
    pts.push_back({a * p0[0] + b * p1[0] + c * p2[0], a * p0[1] + b * p1[1] + c * p2[1]});
  }
  return pts;
}

}  // namespace detail

/// Deterministic synthetic template. "branching_crack": a smooth curve crossing
/// the domain with one branch into the lower-right quadrant, drawn as a
/// truncated Gaussian ridge (sigma = 2 cells, cut at 2 sigma) with peak 1.
inline GridImage make_template(const std::string& kind, GridShape grid) {
  if (kind != "branching_crack") throw ValidationError("make_template: unknown template kind '" + kind + "'");
  std::vector<detail::Polyline> lines{detail::branching_crack_main(400), detail::branching_crack_branch(200)};
  GridImage img(grid.nx, grid.ny, 1);
  const double cell = std::min(img.spacing_x(), img.spacing_y());
  const double sigma = 2.0 * cell;
  const double cutoff = 2.0 * sigma;
  const double floor_value = std::exp(-0.5 * (cutoff / sigma) * (cutoff / sigma));
  double peak = 0.0;
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      const double x = img.coord_x(i), y = img.coord_y(j);
      double d = std::numeric_limits<double>::infinity();
      for (const auto& line : lines)
        for (std::size_t k = 0; k + 1 < line.size(); ++k)
          d = std::min(d, detail::segment_distance(x, y, line[k][0], line[k][1], line[k + 1][0], line[k + 1][1]));
      double v = 0.0;
      if (d < cutoff) v = (std::exp(-0.5 * (d / sigma) * (d / sigma)) - floor_value) / (1.0 - floor_value);
      img.at(i, j) = v;
      peak = std::max(peak, v);
    }
  if (peak > 0.0) img *= 1.0 / peak;
  return img;
}

// ---------------------------------------------------------------------------
// Jump fields and image recipes

/// Per-cell crack descriptor: normal and tangential displacement jump (km),
/// crack-normal angle alpha in [0, pi) and an ice/valid mask.
struct JumpField {
  int nx = 0;
  int ny = 0;
  std::vector<double> un;
  std::vector<double> ut;
  std::vector<double> alpha;
  std::vector<unsigned char> mask;  // 1 = ice (valid), 0 = land/invalid

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
  double magnitude(std::size_t k) const { return std::sqrt(un[k] * un[k] + ut[k] * ut[k]); }
  GridShape shape() const { return {nx, ny}; }

  void validate() const {
    require(nx >= kMinGridSize && ny >= kMinGridSize, "JumpField: grid too small");
    require(un.size() == size() && ut.size() == size() && alpha.size() == size() && mask.size() == size(),
            "JumpField: channel sizes do not match the grid");
    bool any = false;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const std::size_t k = index(i, j);
        if (!mask[k]) continue;
        any = true;
        if (!std::isfinite(un[k]) || !std::isfinite(ut[k]) || !std::isfinite(alpha[k]))
          throw ValidationError("JumpField: non-finite value in masked-in cell (i=" + std::to_string(i) +
                                ", j=" + std::to_string(j) + ")");
      }
    if (!any) throw ValidationError("JumpField: every cell is masked out (no valid ice cells)");
  }

  /// A plain intensity image viewed as an opening magnitude (alpha = 0, all valid).
  static JumpField from_intensity(const GridImage& img) {
    require(img.channels() == 1, "JumpField::from_intensity: expected a single-channel image");
    JumpField j;
    j.nx = img.nx();
    j.ny = img.ny();
    j.un.resize(j.size());
    j.ut.assign(j.size(), 0.0);
    j.alpha.assign(j.size(), 0.0);
    j.mask.assign(j.size(), 1);
    for (int jj = 0; jj < j.ny; ++jj)
      for (int i = 0; i < j.nx; ++i) j.un[j.index(i, jj)] = img.at(i, jj);
    return j;
  }
};

enum class RecipeVariant { MagnitudeAngle, GradientOnly, GradientAngle };

inline RecipeVariant parse_recipe(const std::string& s) {
  if (s == "mag-angle") return RecipeVariant::MagnitudeAngle;
  if (s == "grad") return RecipeVariant::GradientOnly;
  if (s == "grad-angle") return RecipeVariant::GradientAngle;
  throw ValidationError("unknown recipe '" + s + "' (expected mag-angle, grad or grad-angle)");
}

inline std::string to_string(RecipeVariant v) {
  switch (v) {
    case RecipeVariant::MagnitudeAngle: return "mag-angle";
    case RecipeVariant::GradientOnly: return "grad";
    case RecipeVariant::GradientAngle: return "grad-angle";
  }
  return "?";
}

struct ImageRecipe {
  RecipeVariant variant = RecipeVariant::GradientAngle;
  double threshold = 0.4;  // km; smaller openings are dropped

  void validate() const { require(threshold >= 0.0, "ImageRecipe: threshold must be >= 0"); }
};

/// Zeroes masked-out cells and cells whose |[u]| is below the threshold.
inline JumpField threshold_jump_field(const JumpField& j, double threshold) {
  JumpField out = j;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!out.mask[k] || out.magnitude(k) < threshold) {
      out.un[k] = 0.0;
      out.ut[k] = 0.0;
      out.alpha[k] = 0.0;
    }
  }
  return out;
}

/// Per-channel multipliers applied to every image of a batch.
struct ChannelScale {
  std::vector<double> factors;
};

/// Factors giving the reference image unit L2 norm in every channel
/// (channels with zero norm keep factor 1).
inline ChannelScale unit_norm_scale(const GridImage& reference) {
  ChannelScale s;
  for (int c = 0; c < reference.channels(); ++c) {
    const double n = l2_norm(reference.channel(c));
    s.factors.push_back(n > 0.0 ? 1.0 / n : 1.0);
  }
  return s;
}

inline GridImage apply_scale(GridImage img, const ChannelScale& s) {
  require(static_cast<int>(s.factors.size()) == img.channels(), "apply_scale: channel count mismatch");
  for (int j = 0; j < img.ny(); ++j)
    for (int i = 0; i < img.nx(); ++i)
      for (int c = 0; c < img.channels(); ++c) img.at(i, j, c) *= s.factors[static_cast<std::size_t>(c)];
  return img;
}

/// Unscaled recipe image. Channels: MagnitudeAngle = (|[u]|, alpha),
/// GradientOnly = (d1|[u]|, d2|[u]|), GradientAngle = (d1|[u]|, d2|[u]|, alpha).
inline GridImage build_image_unscaled(const JumpField& jf, const ImageRecipe& r) {
  jf.validate();
  r.validate();
  const JumpField t = threshold_jump_field(jf, r.threshold);
  GridImage mag(t.nx, t.ny, 1), ang(t.nx, t.ny, 1);
  for (int j = 0; j < t.ny; ++j)
    for (int i = 0; i < t.nx; ++i) {
      const std::size_t k = t.index(i, j);
      mag.at(i, j) = t.magnitude(k);
      ang.at(i, j) = t.alpha[k];
    }
  if (r.variant == RecipeVariant::MagnitudeAngle) {
    GridImage out(t.nx, t.ny, 2);
    for (int j = 0; j < t.ny; ++j)
      for (int i = 0; i < t.nx; ++i) {
        out.at(i, j, 0) = mag.at(i, j);
        out.at(i, j, 1) = ang.at(i, j);
      }
    return out;
  }
  const JacobianField g = finite_diff_jacobian(mag);
  const int n = r.variant == RecipeVariant::GradientOnly ? 2 : 3;
  GridImage out(t.nx, t.ny, n);
  for (int j = 0; j < t.ny; ++j)
    for (int i = 0; i < t.nx; ++i) {
      out.at(i, j, 0) = g.d1.at(i, j);
      out.at(i, j, 1) = g.d2.at(i, j);
      if (n == 3) out.at(i, j, 2) = ang.at(i, j);
    }
  return out;
}

/// Recipe image with the batch channel scale applied.
inline GridImage build_image(const JumpField& jf, const ImageRecipe& r, const ChannelScale& scale) {
  return apply_scale(build_image_unscaled(jf, r), scale);
}

/// Recipe image of a reference field, scaled to unit L2 norm per channel;
/// also returns the scale so it can be applied to the rest of the batch.
inline std::pair<GridImage, ChannelScale> build_reference_image(const JumpField& jf, const ImageRecipe& r) {
  GridImage raw = build_image_unscaled(jf, r);
  ChannelScale s = unit_norm_scale(raw);
  return {apply_scale(std::move(raw), s), s};
}

// ---------------------------------------------------------------------------
// Jump-field files

inline JumpField jump_field_from_data(const FieldData& d, const std::string& where) {
  JumpField j;
  j.nx = d.nx;
  j.ny = d.ny;
  auto take = [&](const char* name) -> const std::vector<double>& {
    const int c = d.channel_index(name);
    if (c < 0) throw ValidationError(where + ": missing channel '" + name + "'");
    return d.channels[static_cast<std::size_t>(c)];
  };
  j.un = take("un");
  j.ut = take("ut");
  j.alpha = take("alpha");
  const auto& m = take("mask");
  j.mask.resize(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) j.mask[k] = (std::isfinite(m[k]) && m[k] != 0.0) ? 1 : 0;
  try {
    j.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return j;
}

/// Reads a field with channels un, ut, alpha, mask. Any physical extent in
/// the manifest is ignored: the grid is mapped onto the unit square.
inline JumpField ingest_jump_field(const fs::path& path) {
  return jump_field_from_data(read_field(path), path.string());
}

inline bool is_jump_field(const FieldData& d) {
  return d.channel_index("un") >= 0 && d.channel_index("ut") >= 0 && d.channel_index("alpha") >= 0 &&
         d.channel_index("mask") >= 0;
}

inline void write_jump_field(const fs::path& dir, const JumpField& j, nlohmann::json extra = nlohmann::json::object()) {
  FieldData d;
  d.nx = j.nx;
  d.ny = j.ny;
  d.channel_names = {"un", "ut", "alpha", "mask"};
  d.channels = {j.un, j.ut, j.alpha, std::vector<double>(j.mask.begin(), j.mask.end())};
  d.extra = std::move(extra);
  write_field(dir, d);
}

}  // namespace warpcal
