// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.
//
//   acceptance <scratch-dir> [--reuse]
//
// --reuse keeps an existing toy workspace (stage digests then skip unchanged
// work); the default starts from scratch.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "synthetic.hpp"
#include "warpcal/workspace.hpp"

using namespace warpcal;

namespace {

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& detail) {
  g_lines.push_back({id, pass, detail});
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> col(const Eigen::MatrixXd& m, Eigen::Index j) {
  return std::vector<double>(m.col(j).data(), m.col(j).data() + m.rows());
}

GridImage smooth_pair_image(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> c(0.3, 0.7), w(0.01, 0.03), a(0.5, 1.0);
  const double x1 = c(rng), y1 = c(rng), w1 = w(rng), a1 = a(rng);
  const double x2 = c(rng), y2 = c(rng), w2 = w(rng), a2 = a(rng);
  return GridImage::from_function(n, n, 1, [=](double x, double y) {
    return std::array<double, 1>{a1 * std::exp(-((x - x1) * (x - x1) + (y - y1) * (y - y1)) / w1) +
                                 a2 * std::exp(-((x - x2) * (x - x2) + (y - y2) * (y - y2)) / w2)};
  });
}

// Basis warp with uniform coefficients in [-amp, amp], redrawn until det J > 0.
Diffeomorphism random_warp(const BasisSet& basis, double amp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amp, amp);
  std::vector<double> c(basis.size());
  for (;;) {
    for (double& v : c) v = u(rng);
    auto g = warp_from_coefficients(basis, c);
    if (g.orientation_preserving()) return g;
  }
}

// ---------------------------------------------------------------------------
// 1, 2, 3, 7: the toy experiment

struct ToyRun {
  bool ok = false;
  std::string error;
  std::map<MetricMode, ojson> summaries;
  std::map<MetricMode, double> acceptance;
};

ToyRun run_toy(const fs::path& ws, bool reuse) {
  ToyRun r;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (!reuse || !fs::exists(manifest_path(ws))) {
      ToyOptions o;
      o.force = true;
      std::cout << "  " << cmd_toy(ws, o).message << "\n";
    }
    std::cout << "  " << cmd_register(ws, {}).message << fmt(" (%.0f s)", elapsed(t0)) << "\n";
    std::cout << "  " << cmd_emulate(ws, {}).message << fmt(" (%.0f s)", elapsed(t0)) << "\n";
    for (MetricMode md : {MetricMode::Phase, MetricMode::Amplitude, MetricMode::Euclidean, MetricMode::Both}) {
      CalibrateOptions o;
      o.mode = md;
      const auto c = cmd_calibrate(ws, o);
      std::cout << "  " << c.stage.message << fmt(" (%.0f s)", elapsed(t0)) << "\n";
      r.summaries[md] = c.summary;
      r.acceptance[md] = c.summary.value("acceptance", 0.0);
    }
    std::cout << "  " << cmd_report(ws).message << fmt(" (%.0f s total)", elapsed(t0)) << "\n";
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

void criterion_1(const ToyRun& toy) {
  if (!toy.ok) return report(1, false, "toy pipeline failed: " + toy.error);
  const auto& p = toy.summaries.at(MetricMode::Phase)["parameters"];
  const double truth[2] = {0.3, 0.1};
  bool pass = true;
  std::string detail = "phase-only:";
  for (int k = 0; k < 2; ++k) {
    const auto& j = p[theta_names(2)[static_cast<std::size_t>(k)]];
    const double mode = j["mode"].get<double>(), lo = j["lower95"].get<double>(), hi = j["upper95"].get<double>();
    const bool near = std::abs(mode - truth[k]) <= 0.15, covered = lo <= truth[k] && truth[k] <= hi;
    pass = pass && near && covered;
    detail += fmt(" theta_%d mode %.3f (%.3f, %.3f)", k + 1, mode, lo, hi);
  }
  report(1, pass, detail + "; truth (0.3, 0.1), tolerance 0.15");
}

void criterion_2(const ToyRun& toy) {
  if (!toy.ok) return report(2, false, "toy pipeline failed");
  const double ph = toy.summaries.at(MetricMode::Phase)["peak_ratio"].get<double>();
  const double am = toy.summaries.at(MetricMode::Amplitude)["peak_ratio"].get<double>();
  const double eu = toy.summaries.at(MetricMode::Euclidean)["peak_ratio"].get<double>();
  report(2, ph >= 1.5 * am && ph >= 1.5 * eu,
         fmt("peak/mean density: phase %.2f, amplitude %.2f, euclidean %.2f (need phase >= 1.5x both)", ph, am, eu));
}

void criterion_3(const fs::path& ws, const ToyRun& toy) {
  if (!toy.ok) return report(3, false, "toy pipeline failed");
  const Table t = read_table(ws / "metrics.csv");
  const auto da = t.numbers("d_a"), q0 = t.numbers("q0");
  const double cv = std::sqrt(stats::variance(da)) / stats::mean(da);
  const double ratio = stats::median(da) / stats::median(q0);
  report(3, cv <= 0.35 && ratio <= 0.25,
         fmt("CV(d_a) %.3f (<= 0.35); median d_a / median pre-registration distance %.3f (<= 0.25)", cv, ratio));
}

void criterion_7(const ToyRun& toy) {
  // oracles
  ChainConfig cfg;
  cfg.nIters = 40000;
  cfg.burnIn = 20000;
  bool pass = true;
  std::string detail;
  {
    ParamSpec s{"x", ParamSpec::Kind::Bounded, {-1e9, 1e9}, 0.0, 1.0};
    const auto post = run_mcmc([](std::span<const double> x) { return -0.5 * x[0] * x[0]; }, {s}, cfg);
    const auto d = col(post.merged(), 0);
    const double err = std::abs(stats::mean(d)), mcse = stats::batch_means_mcse(d);
    pass = pass && err <= 3 * mcse;
    detail += fmt("normal |mean| %.4f vs 3 MCSE %.4f; ", err, 3 * mcse);
  }
  {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> z(0.0, 0.8);
    double ss = 0.0;
    for (int i = 0; i < 40; ++i) {
      const double v = z(rng);
      ss += v * v;
    }
    const InverseGamma prior{20.0, 20.0 * 0.5};
    const InverseGamma exact{prior.shape + 20.0, prior.scale + 0.5 * ss};
    ParamSpec s{"s2", ParamSpec::Kind::Positive, {0.0, std::numeric_limits<double>::infinity()}, prior.mode(), 0.3};
    const auto post = run_mcmc(
        [&](std::span<const double> p) { return prior.log_density(p[0]) - 20.0 * std::log(p[0]) - 0.5 * ss / p[0]; }, {s},
        cfg);
    const auto d = col(post.merged(), 0);
    const double err = std::abs(stats::mean(d) - exact.mean()), mcse = stats::batch_means_mcse(d);
    pass = pass && err <= 3 * mcse;
    detail += fmt("IG |mean - exact| %.5f vs 3 MCSE %.5f; ", err, 3 * mcse);
  }
  if (!toy.ok) return report(7, false, detail + "toy pipeline failed");
  double worst = 0.0, accLo = 1.0, accHi = 0.0;
  for (const auto& [md, s] : toy.summaries) {
    for (const auto& [name, p] : s["parameters"].items()) {
      if (p["rhat"].is_null()) {
        pass = false;
        continue;
      }
      worst = std::max(worst, p["rhat"].get<double>());
    }
    accLo = std::min(accLo, toy.acceptance.at(md));
    accHi = std::max(accHi, toy.acceptance.at(md));
  }
  pass = pass && worst < 1.1 && accLo >= 0.15 && accHi <= 0.40;
  report(7, pass, detail + fmt("toy max R-hat %.4f (< 1.1), acceptance %.3f..%.3f (in [0.15, 0.40])", worst, accLo, accHi));
}

// ---------------------------------------------------------------------------
// 4: registration oracle

void criterion_4() {
  const int n = 48;
  RegistrationConfig cfg;
  cfg.K = 3;
  const auto basis = build_basis(cfg.K, {n, n});
  std::mt19937_64 rng(2);
  bool pass = true;
  std::string detail;
  double worstRatio = 0.0, minPhase = 1e300;
  for (int trial = 0; trial < 3; ++trial) {
    const auto gt = random_warp(basis, 0.05, rng);
    const auto f = smooth_pair_image(rng, n);
    const auto res = register_images(f, apply_warp(f, gt), basis, cfg);
    const double ratio = res.dAmp * res.dAmp / res.initialEnergy;
    worstRatio = std::max(worstRatio, ratio);
    minPhase = std::min(minPhase, res.dPhase);
    pass = pass && ratio <= 0.10 && res.dPhase > 0.0;
  }
  detail += fmt("warp recovery: worst final/initial energy %.4f (<= 0.10), min d_p %.4f (> 0); ", worstRatio, minPhase);
  const auto tmpl = make_template("branching_crack", {64, 64});
  RegistrationConfig full;
  const auto self = register_images(tmpl, tmpl, full);
  const double qn = l2_norm(qmap(tmpl).q);
  pass = pass && self.dAmp <= 1e-6 * qn && self.dPhase <= 1e-6;
  report(4, pass, detail + fmt("self: d_a %.2e (<= %.2e), d_p %.2e (<= 1e-6)", self.dAmp, 1e-6 * qn, self.dPhase));
}

// ---------------------------------------------------------------------------
// 5: metric properties

void criterion_5() {
  const int n = 40;
  RegistrationConfig cfg;
  cfg.K = 3;
  const auto basis = build_basis(cfg.K, {n, n});
  std::mt19937_64 rng(5);
  double worstAsym = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    const auto a = warpcal::testing::smooth_field(rng, n), b = warpcal::testing::smooth_field(rng, n);
    const double ab = register_images(a, b, basis, cfg).dAmp, ba = register_images(b, a, basis, cfg).dAmp;
    worstAsym = std::max(worstAsym, std::abs(ab - ba) / std::max(ab, ba));
  }
  const auto f = warpcal::testing::smooth_field(rng, n);
  const double self = register_images(f, f, basis, cfg).dAmp;
  const double selfTol = 1e-12 * l2_norm(qmap(f).q);  // rounding only

  double worstTri = -1e300;
  std::normal_distribution<double> z;
  for (int t = 0; t < 100; ++t) {
    GridImage x(n, n, 2), y(n, n, 2), w(n, n, 2);
    for (auto* g : {&x, &y, &w})
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
          for (int c = 0; c < 2; ++c) g->at(i, j, c) = z(rng);
    worstTri = std::max(worstTri, l2_distance(x, w) - l2_distance(x, y) - l2_distance(y, w));
  }

  const int m = 128;
  const auto big = build_basis(3, {m, m});
  const auto q = qmap(smooth_pair_image(rng, m));
  double worstNorm = 0.0;
  for (int t = 0; t < 5; ++t)
    worstNorm = std::max(worstNorm, std::abs(l2_norm(group_action(q.q, random_warp(big, 0.03, rng))) / l2_norm(q.q) - 1.0));
  report(5, worstAsym <= 0.10 && self <= selfTol && worstTri <= 1e-10 && worstNorm <= 0.01,
         fmt("d_a asymmetry %.4f (<= 0.10); d_a(f,f) %.1e (<= %.1e); triangle excess %.1e (<= 1e-10); norm change %.4f (<= 0.01)",
             worstAsym, self, selfTol, worstTri, worstNorm));
}

// ---------------------------------------------------------------------------
// 6: emulator suite

void criterion_6() {
  using warpcal::testing::gp_draw;
  using warpcal::testing::lognormal_draw;
  GPHyperParams h;
  h.rho = Eigen::Vector2d(0.3, 0.3);
  h.sigma2 = 1.0;
  h.tau2 = 0.01;

  // interpolation with the nugget pinned near zero
  const auto ts = gp_draw(40, 2, h, 10.0, 31);
  FitOptions pinned;
  pinned.fixedTau2 = 1e-10;
  const auto m = gp_fit_mle(ts, Metric::Phase, Transform::Identity, pinned);
  double worst = 0.0;
  for (int i = 0; i < ts.size(); ++i)
    worst = std::max(worst, std::abs(m.predict(ts.theta.row(i).transpose()).mean - ts.metrics.at(Metric::Phase)(i)));

  // LOO coverage on within-model data
  const auto cov = loo_cv(gp_draw(80, 2, h, 10.0, 4), Metric::Phase, {Transform::Identity}).candidates[0].coverage;

  // transform selection on lognormal data
  int logWins = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto ln = lognormal_draw(50, 2, h, 0.0, 1000 + rep);
    logWins += loo_cv(ln, Metric::Phase, {Transform::Identity, Transform::Log}).selected == Transform::Log;
  }
  report(6, worst <= 1e-6 && cov >= 0.85 && cov <= 1.0 && logWins >= 16,
         fmt("interpolation error %.2e (<= 1e-6); LOO coverage %.3f (in [0.85, 1]); log selected %d/20 (>= 16)", worst, cov,
             logWins));
}

// ---------------------------------------------------------------------------
// 8: prior construction

void criterion_8(const fs::path& ws, const ToyRun& toy) {
  Eigen::VectorXd metric;
  if (toy.ok) {
    const auto v = read_table(ws / "metrics.csv").numbers("d_p");
    metric = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  } else {
    metric = Eigen::VectorXd::LinSpaced(50, 0.5, 3.0);
  }
  const InverseGamma ig = Priors::discrepancy_prior(metric);
  const double d10 = stats::quantile(std::vector<double>(metric.data(), metric.data() + metric.size()), 0.1);
  const double analytic = 20.0 * d10 * d10 / 21.0;
  // Grid argmax of the implemented log density, refined by repeated zooming.
  double lo = 1e-6 * analytic, hi = 10.0 * analytic, best = lo;
  for (int level = 0; level < 12; ++level) {
    const int pts = 2001;
    double bestV = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < pts; ++k) {
      const double x = lo + (hi - lo) * k / (pts - 1);
      const double v = ig.log_density(x);
      if (v > bestV) bestV = v, best = x;
    }
    const double step = (hi - lo) / (pts - 1);
    lo = std::max(best - 2 * step, 0.0);
    hi = best + 2 * step;
  }
  const double err = std::abs(best - analytic);
  report(8, err <= 1e-10 && std::abs(ig.mode() - analytic) <= 1e-15 * analytic,
         fmt("d10 %.4f; analytic mode %.12f, grid argmax %.12f, |diff| %.1e (<= 1e-10)", d10, analytic, best, err));
}

// ---------------------------------------------------------------------------
// 9: external jump fields on an 84 x 99 grid

JumpField synthetic_crack(double t1, double t2) {
  JumpField j;
  j.nx = 84;
  j.ny = 99;
  j.un.assign(j.size(), 0.0);
  j.ut.assign(j.size(), 0.0);
  j.alpha.assign(j.size(), 0.0);
  j.mask.assign(j.size(), 1);
  const double phi = (t1 - 30.0) / 40.0 * 0.8;              // crack direction
  const double half = 0.15 + 0.25 * (t2 - 10.0) / 140.0;    // half length
  const double cx = 0.5, cy = 0.5, dx = std::cos(phi), dy = std::sin(phi);
  for (int jj = 0; jj < j.ny; ++jj)
    for (int i = 0; i < j.nx; ++i) {
      const std::size_t k = j.index(i, jj);
      const double x = i / 83.0, y = jj / 98.0;
      if (x > 0.85 && y > 0.85) {  // land
        j.mask[k] = 0;
        j.un[k] = j.ut[k] = j.alpha[k] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const double s = (x - cx) * dx + (y - cy) * dy, r = -(x - cx) * dy + (y - cy) * dx;
      const double dist = std::abs(s) <= half ? std::abs(r) : std::hypot(std::abs(s) - half, r);
      const double open = std::exp(-0.5 * (dist / 0.015) * (dist / 0.015));
      j.un[k] = 1.5 * open;
      j.ut[k] = 0.3 * open;
      j.alpha[k] = std::fmod(phi + std::numbers::pi / 2 + std::numbers::pi, std::numbers::pi);
    }
  return j;
}

void criterion_9(const fs::path& root) {
  const fs::path src = root / "external_src", ws = root / "external_ws";
  try {
    fs::remove_all(src);
    write_jump_field(src / "observation", synthetic_crack(30.0, 80.0), {{"extent_km", {-2345, -1505, -260, 730}}});
    const auto dm = lhs_sample(10, {{10, 50}, {10, 150}}, 99);
    Table d;
    d.header = {"theta_1", "theta_2", "path"};
    for (std::size_t r = 0; r < dm.size(); ++r) {
      const std::string rel = "sim_" + std::to_string(r);
      write_jump_field(src / rel, synthetic_crack(dm.rows[r][0], dm.rows[r][1]));
      d.add_row({format_double(dm.rows[r][0]), format_double(dm.rows[r][1]), rel});
    }
    write_table(src / "design.csv", d);

    InitOptions io;
    io.observation = src / "observation";
    io.design = src / "design.csv";
    io.bounds = {{10, 50}, {10, 150}};
    io.force = true;
    cmd_init(ws, io);
    RegisterOptions ro;
    ro.cfg.K = 4;
    ro.cfg.maxIters = 60;
    ro.cfg.blurSchedule = {2.0};
    ro.force = true;
    cmd_register(ws, ro);
    EmulateOptions eo;
    eo.force = true;
    cmd_emulate(ws, eo);
    CalibrateOptions co;
    co.mode = MetricMode::Both;
    co.chain.nIters = 4000;
    co.chain.burnIn = 2000;
    co.force = true;
    cmd_calibrate(ws, co);
    cmd_report(ws);
    const Table t = read_table(ws / "metrics.csv");
    bool finite = t.rows.size() == 10;
    for (const char* c : {"d_a", "d_p", "d_euclid"})
      for (double v : t.numbers(c)) finite = finite && std::isfinite(v) && v >= 0.0;
    const bool files = fs::exists(ws / "report" / "summary.txt") && fs::exists(ws / "report" / "posterior_both.svg");
    report(9, finite && files, "84x99 external jump fields: init, register, emulate, calibrate, report completed");
  } catch (const std::exception& e) {
    report(9, false, std::string("84x99 external pipeline failed: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <scratch-dir> [--reuse]\n";
    return 2;
  }
  const fs::path root = argv[1];
  const bool reuse = argc > 2 && std::string(argv[2]) == "--reuse";
  fs::create_directories(root);

  std::cout << "toy experiment (64x64, N=50, truth (0.3, 0.1)):\n";
  const ToyRun toy = run_toy(root / "toy", reuse);
  criterion_1(toy);
  criterion_2(toy);
  criterion_3(root / "toy", toy);
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7(toy);
  criterion_8(root / "toy", toy);
  criterion_9(root);

  int failed = 0;
  for (const auto& l : g_lines) failed += !l.pass;
  std::printf("%d of %zu criteria passed\n", static_cast<int>(g_lines.size()) - failed, g_lines.size());
  return failed ? 1 : 0;
}
