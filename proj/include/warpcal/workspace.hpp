#pragma once

// Workspace pipeline: toy generation or external ingestion, batch
// registration, emulator fitting, calibration and reporting. Every stage
// reads and writes plain files under one directory and records the digest of
// its inputs in manifest.json so an unchanged rerun is skipped.
//
// Layout
//   manifest.json            kind, parameter box, truth, recipe, stage records
//   template/                toy only: template intensity field
//   observation/             reference jump field
//   runs/run_NNNN/           one jump field per design row
//   design.csv               theta_1..theta_d, path
//   metrics.csv              run, theta_*, d_a, d_p, d_euclid, q0, converged, iters
//   traces/run_NNNN.csv      registration energy per accepted iterate
//   models.json, cv_report.json
//   posterior/<mode>/        samples.csv, summary.json, density.csv
//   report/                  *.svg, summary.txt

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpcal/calibration.hpp"
#include "warpcal/data_pipeline.hpp"
#include "warpcal/design.hpp"
#include "warpcal/emulator.hpp"
#include "warpcal/field_io.hpp"
#include "warpcal/parallel.hpp"
#include "warpcal/posterior_summary.hpp"
#include "warpcal/registration.hpp"
#include "warpcal/svg.hpp"
#include "warpcal/table.hpp"

namespace warpcal {

inline constexpr const char* kToolVersion = "0.1.0";

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Content digests

/// 64-bit FNV-1a.
class Digest {
public:
  Digest& update(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001b3ull;
    }
    return *this;
  }

  Digest& update_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingArtifactError("missing file: " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    update(p.filename().string());
    return update(ss.str());
  }

  /// Every regular file below dir, in sorted path order.
  Digest& update_tree(const fs::path& dir) {
    if (!fs::exists(dir)) throw MissingArtifactError("missing directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      update(fs::relative(f, dir).generic_string());
      update_file(f);
    }
    return *this;
  }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

// ---------------------------------------------------------------------------
// Manifest

inline fs::path manifest_path(const fs::path& ws) { return ws / "manifest.json"; }

inline ojson load_manifest(const fs::path& ws) {
  std::ifstream in(manifest_path(ws));
  if (!in) throw MissingArtifactError("missing file: " + manifest_path(ws).string() + " (run 'toy' or 'init' first)");
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path(ws).string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const ojson& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << j.dump(2) << "\n";
}

inline ojson read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifactError("missing file: " + p.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

inline void save_manifest(const fs::path& ws, const ojson& m) { write_json(manifest_path(ws), m); }

inline std::vector<Bounds> manifest_bounds(const ojson& m) {
  std::vector<Bounds> b;
  for (const auto& r : m.at("bounds")) b.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
  return b;
}

inline std::optional<std::vector<double>> manifest_truth(const ojson& m) {
  if (!m.contains("truth") || m["truth"].is_null()) return std::nullopt;
  return m["truth"].get<std::vector<double>>();
}

inline std::vector<std::string> theta_names(std::size_t d) {
  std::vector<std::string> n;
  for (std::size_t j = 0; j < d; ++j) n.push_back("theta_" + std::to_string(j + 1));
  return n;
}

/// True when the stage recorded the same digest and all its outputs exist.
inline bool stage_current(const ojson& m, const std::string& stage, const std::string& digest,
                          const fs::path& ws, const std::vector<std::string>& outputs) {
  if (!m.contains("stages") || !m["stages"].contains(stage)) return false;
  const auto& s = m["stages"][stage];
  if (s.value("digest", std::string()) != digest) return false;
  for (const auto& o : outputs)
    if (!fs::exists(ws / o)) return false;
  return true;
}

inline void record_stage(const fs::path& ws, const std::string& stage, const std::string& digest, const ojson& config,
                         const std::vector<std::string>& outputs) {
  ojson m = load_manifest(ws);
  m["stages"][stage] = ojson{{"digest", digest}, {"config", config}, {"outputs", outputs}};
  save_manifest(ws, m);
}

struct StageOutcome {
  bool skipped = false;
  std::string message;
};

inline std::string run_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "run_%04zu", i);
  return buf;
}

inline void prepare_workspace(const fs::path& ws, bool force) {
  if (fs::exists(ws) && !fs::is_empty(ws)) {
    if (!force) throw ValidationError("workspace " + ws.string() + " already exists; pass --force to overwrite");
    fs::remove_all(ws);
  }
  fs::create_directories(ws);
}

inline ojson recipe_json(const ImageRecipe& r) { return ojson{{"variant", to_string(r.variant)}, {"threshold", r.threshold}}; }

// ---------------------------------------------------------------------------
// toy / init

struct ToyOptions {
  std::vector<double> truth{0.3, 0.1};
  int N = 50;
  int grid = 64;
  std::uint64_t seed = 2024;
  std::string templateKind = "branching_crack";
  bool force = false;
};

inline StageOutcome cmd_toy(const fs::path& ws, const ToyOptions& opt) {
  require(opt.truth.size() == 2, "toy: truth must have two components");
  const ToyParams truth{opt.truth[0], opt.truth[1]};
  truth.validate();
  require(opt.N >= 1, "toy: N must be >= 1");
  const std::vector<Bounds> bounds{{ToyParams::kLower, ToyParams::kUpper}, {ToyParams::kLower, ToyParams::kUpper}};
  const GridImage tmpl = make_template(opt.templateKind, {opt.grid, opt.grid});
  const DesignMatrix dm = lhs_sample(opt.N, bounds, opt.seed);
  prepare_workspace(ws, opt.force);

  write_field(ws / "template", tmpl, {"intensity"});
  write_jump_field(ws / "observation", JumpField::from_intensity(generate_toy_run(tmpl, truth)));
  Table design;
  design.header = theta_names(2);
  design.header.push_back("path");
  for (std::size_t r = 0; r < dm.size(); ++r) {
    const ToyParams p{dm.rows[r][0], dm.rows[r][1]};
    const std::string rel = "runs/" + run_dir_name(r);
    write_jump_field(ws / rel, JumpField::from_intensity(generate_toy_run(tmpl, p)));
    design.add_row({format_double(p.theta1), format_double(p.theta2), rel});
  }
  write_table(ws / "design.csv", design);

  ojson m;
  m["tool"] = "warpcal";
  m["version"] = kToolVersion;
  m["kind"] = "toy";
  m["parameters"] = theta_names(2);
  m["bounds"] = ojson::array({ojson::array({bounds[0].lo, bounds[0].hi}), ojson::array({bounds[1].lo, bounds[1].hi})});
  m["truth"] = opt.truth;
  m["grid"] = ojson::array({opt.grid, opt.grid});
  m["template"] = opt.templateKind;
  m["design"] = ojson{{"algorithm", kDesignAlgorithm}, {"seed", opt.seed}, {"N", opt.N}};
  // Toy images are intensity rasters: gradient recipe, nothing to threshold.
  m["recipe"] = recipe_json({RecipeVariant::GradientOnly, 0.0});
  m["stages"] = ojson::object();
  save_manifest(ws, m);
  return {false, "toy workspace with " + std::to_string(opt.N) + " runs written to " + ws.string()};
}

struct InitOptions {
  fs::path observation;  // jump-field directory or field.json
  fs::path design;       // csv with theta_* columns and a path column (relative to the csv)
  std::vector<Bounds> bounds;  // empty: design range
  std::optional<std::vector<double>> truth;
  ImageRecipe recipe;
  bool force = false;
};

/// Ingests externally produced jump fields (e.g. simulator output) into a workspace.
inline StageOutcome cmd_init(const fs::path& ws, const InitOptions& opt) {
  const JumpField obs = ingest_jump_field(opt.observation);
  const Table src = read_table(opt.design);
  const int pathCol = src.require_column("path");
  std::vector<int> thetaCols;
  for (std::size_t c = 0; c < src.header.size(); ++c)
    if (src.header[c].rfind("theta_", 0) == 0) thetaCols.push_back(static_cast<int>(c));
  require(!thetaCols.empty(), opt.design.string() + ": no theta_* columns");
  require(!src.rows.empty(), opt.design.string() + ": no design rows");
  const std::size_t d = thetaCols.size();

  std::vector<std::vector<double>> theta;
  std::vector<JumpField> fields;
  for (std::size_t r = 0; r < src.rows.size(); ++r) {
    std::vector<double> t;
    for (int c : thetaCols) t.push_back(src.number(r, c));
    fs::path p = src.rows[r][static_cast<std::size_t>(pathCol)];
    if (p.is_relative()) p = opt.design.parent_path() / p;
    JumpField jf = ingest_jump_field(p);
    if (jf.nx != obs.nx || jf.ny != obs.ny)
      throw ValidationError(p.string() + ": grid " + std::to_string(jf.nx) + "x" + std::to_string(jf.ny) +
                            " differs from the observation grid " + std::to_string(obs.nx) + "x" + std::to_string(obs.ny));
    theta.push_back(std::move(t));
    fields.push_back(std::move(jf));
  }
  std::vector<Bounds> bounds = opt.bounds;
  if (bounds.empty()) {
    for (std::size_t j = 0; j < d; ++j) {
      double lo = theta[0][j], hi = theta[0][j];
      for (const auto& t : theta) lo = std::min(lo, t[j]), hi = std::max(hi, t[j]);
      require(hi > lo, "init: design column theta_" + std::to_string(j + 1) + " is constant; pass explicit bounds");
      bounds.push_back({lo, hi});
    }
  }
  require(bounds.size() == d, "init: bounds dimension does not match the design");
  if (opt.truth) require(opt.truth->size() == d, "init: truth dimension does not match the design");
  opt.recipe.validate();

  prepare_workspace(ws, opt.force);
  write_jump_field(ws / "observation", obs);
  Table design;
  design.header = theta_names(d);
  design.header.push_back("path");
  for (std::size_t r = 0; r < fields.size(); ++r) {
    const std::string rel = "runs/" + run_dir_name(r);
    write_jump_field(ws / rel, fields[r]);
    std::vector<std::string> row;
    for (double v : theta[r]) row.push_back(format_double(v));
    row.push_back(rel);
    design.add_row(std::move(row));
  }
  write_table(ws / "design.csv", design);

  ojson m;
  m["tool"] = "warpcal";
  m["version"] = kToolVersion;
  m["kind"] = "external";
  m["parameters"] = theta_names(d);
  m["bounds"] = ojson::array();
  for (const auto& b : bounds) m["bounds"].push_back(ojson::array({b.lo, b.hi}));
  m["truth"] = opt.truth ? ojson(*opt.truth) : ojson(nullptr);
  m["grid"] = ojson::array({obs.nx, obs.ny});
  m["recipe"] = recipe_json(opt.recipe);
  m["stages"] = ojson::object();
  save_manifest(ws, m);
  return {false, "ingested " + std::to_string(fields.size()) + " runs into " + ws.string()};
}

// ---------------------------------------------------------------------------
// register

struct RegisterOptions {
  std::optional<RecipeVariant> variant;  // default: manifest recipe
  std::optional<double> threshold;
  RegistrationConfig cfg;
  bool includeSelf = false;
  bool force = false;
};

struct DesignTable {
  std::vector<std::vector<double>> theta;
  std::vector<std::string> paths;
};

inline DesignTable read_design(const fs::path& ws, std::size_t d) {
  const Table t = read_table(ws / "design.csv");
  DesignTable out;
  const int pc = t.require_column("path");
  std::vector<int> cols;
  for (const auto& n : theta_names(d)) cols.push_back(t.require_column(n));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<double> th;
    for (int c : cols) th.push_back(t.number(r, c));
    out.theta.push_back(std::move(th));
    out.paths.push_back(t.rows[r][static_cast<std::size_t>(pc)]);
  }
  return out;
}

inline ImageRecipe resolve_recipe(const ojson& m, const RegisterOptions& opt) {
  ImageRecipe r;
  if (m.contains("recipe")) {
    r.variant = parse_recipe(m["recipe"].value("variant", std::string("grad-angle")));
    r.threshold = m["recipe"].value("threshold", r.threshold);
  }
  if (opt.variant) r.variant = *opt.variant;
  if (opt.threshold) r.threshold = *opt.threshold;
  r.validate();
  return r;
}

inline ojson registration_config_json(const RegistrationConfig& c) {
  return ojson{{"K", c.K},           {"step0", c.step0}, {"max_iters", c.maxIters},
               {"rel_tol", c.relTol}, {"fd_eps", c.fdEps}, {"area_norm", c.areaNorm == AreaNorm::Frobenius ? "frobenius" : "wedge"},
               {"blur_schedule", c.blurSchedule}};
}

inline StageOutcome cmd_register(const fs::path& ws, const RegisterOptions& opt) {
  opt.cfg.validate();
  const ojson m = load_manifest(ws);
  const std::size_t d = m.at("parameters").size();
  const ImageRecipe recipe = resolve_recipe(m, opt);
  const ojson config{{"recipe", recipe_json(recipe)}, {"registration", registration_config_json(opt.cfg)},
                     {"include_self", opt.includeSelf}};
  const std::string digest = Digest()
                                 .update(config.dump())
                                 .update_file(ws / "design.csv")
                                 .update_tree(ws / "observation")
                                 .update_tree(ws / "runs")
                                 .hex();
  if (!opt.force && stage_current(m, "register", digest, ws, {"metrics.csv"}))
    return {true, "register: inputs unchanged, metrics.csv is current"};

  const DesignTable design = read_design(ws, d);
  const JumpField obs = ingest_jump_field(ws / "observation");
  const auto [fobs, scale] = build_reference_image(obs, recipe);
  const BasisSet basis = build_basis(opt.cfg.K, fobs.shape());

  const std::size_t n = design.paths.size();
  std::vector<RegistrationResult> results(n);
  parallel_for(n, [&](std::size_t r) {
    const JumpField jf = ingest_jump_field(ws / design.paths[r]);
    require(jf.nx == obs.nx && jf.ny == obs.ny, design.paths[r] + ": grid differs from the observation");
    results[r] = register_images(fobs, build_image(jf, recipe, scale), basis, opt.cfg);
  });

  Table metrics;
  metrics.header = {"run"};
  for (const auto& t : theta_names(d)) metrics.header.push_back(t);
  for (const char* c : {"d_a", "d_p", "d_euclid", "q0", "converged", "iters"}) metrics.header.push_back(c);
  auto row = [&](const std::string& id, const std::vector<double>& theta, const RegistrationResult& res) {
    std::vector<std::string> cells{id};
    for (double v : theta) cells.push_back(format_double(v));
    for (double v : {res.dAmp, res.dPhase, res.dEuclid, res.initial_qmap_distance()}) cells.push_back(format_double(v));
    cells.push_back(res.converged ? "1" : "0");
    cells.push_back(std::to_string(res.iterations));
    metrics.add_row(std::move(cells));
  };
  auto write_trace = [&](const std::string& id, const RegistrationResult& res) {
    Table tr;
    tr.header = {"iter", "energy"};
    for (std::size_t k = 0; k < res.energyTrace.size(); ++k) tr.add_row({std::to_string(k), format_double(res.energyTrace[k])});
    write_table(ws / "traces" / (id + ".csv"), tr);
  };
  fs::remove_all(ws / "traces");
  int unconverged = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::string id = fs::path(design.paths[r]).filename().string();
    row(id, design.theta[r], results[r]);
    write_trace(id, results[r]);
    if (!results[r].converged) ++unconverged;
  }
  if (opt.includeSelf) {
    const RegistrationResult self = register_images(fobs, fobs, basis, opt.cfg);
    const auto truth = manifest_truth(m);
    row("self", truth ? *truth : std::vector<double>(d, std::numeric_limits<double>::quiet_NaN()), self);
    write_trace("self", self);
  }
  write_table(ws / "metrics.csv", metrics);
  record_stage(ws, "register", digest, config, {"metrics.csv"});
  std::string msg = "register: " + std::to_string(n) + " runs registered";
  if (unconverged) msg += " (" + std::to_string(unconverged) + " not converged, recorded in metrics.csv)";
  return {false, msg};
}

// ---------------------------------------------------------------------------
// emulate

/// Training set from metrics.csv (the self row is excluded).
inline TrainingSet load_training_set(const fs::path& ws) {
  const ojson m = load_manifest(ws);
  const std::size_t d = m.at("parameters").size();
  const Table t = read_table(ws / "metrics.csv");
  const int runCol = t.require_column("run");
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (t.rows[r][static_cast<std::size_t>(runCol)] != "self") keep.push_back(r);
  TrainingSet ts;
  ts.bounds = manifest_bounds(m);
  ts.theta.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(d));
  const auto names = theta_names(d);
  for (std::size_t j = 0; j < d; ++j) {
    const int c = t.require_column(names[j]);
    for (std::size_t k = 0; k < keep.size(); ++k) ts.theta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = t.number(keep[k], c);
  }
  for (Metric mt : {Metric::Amplitude, Metric::Phase, Metric::Euclidean}) {
    const int c = t.column(to_string(mt));
    if (c < 0) continue;
    Eigen::VectorXd v(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) v(static_cast<Eigen::Index>(k)) = t.number(keep[k], c);
    ts.metrics[mt] = v;
  }
  return ts;
}

struct EmulateOptions {
  std::vector<Metric> metrics{Metric::Amplitude, Metric::Phase, Metric::Euclidean};
  std::optional<Transform> transform;  // nullopt: chosen by leave-one-out
  FitOptions fit;
  bool force = false;
};

/// Leave-one-out RMSE of the sample mean of the remaining points.
inline double mean_only_loo_rmse(const Eigen::VectorXd& y) {
  const double n = static_cast<double>(y.size()), s = y.sum();
  double se = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double pred = (s - y(i)) / (n - 1.0);
    se += (y(i) - pred) * (y(i) - pred);
  }
  return std::sqrt(se / n);
}

inline StageOutcome cmd_emulate(const fs::path& ws, const EmulateOptions& opt) {
  const ojson m = load_manifest(ws);
  ojson config{{"metrics", ojson::array()},
               {"transform", opt.transform ? to_string(*opt.transform) : "auto"},
               {"restarts", opt.fit.restarts},
               {"seed", opt.fit.seed}};
  for (Metric mt : opt.metrics) config["metrics"].push_back(to_string(mt));
  const std::string digest = Digest().update(config.dump()).update_file(ws / "metrics.csv").hex();
  if (!opt.force && stage_current(m, "emulate", digest, ws, {"models.json", "cv_report.json"}))
    return {true, "emulate: inputs unchanged, models.json is current"};

  const TrainingSet ts = load_training_set(ws);
  if (ts.size() < ts.dim() + 2)
    throw ValidationError("emulate: " + std::to_string(ts.size()) + " training runs for " + std::to_string(ts.dim()) +
                          " parameters; at least d + 2 = " + std::to_string(ts.dim() + 2) + " are required");
  ojson models{{"parameters", m.at("parameters")},
               {"bounds", m.at("bounds")},
               {"training_table", "metrics.csv"},
               {"models", ojson::object()}};
  ojson cv = ojson::object();
  std::string msg = "emulate:";
  for (Metric mt : opt.metrics) {
    const std::vector<Transform> cands = opt.transform ? std::vector<Transform>{*opt.transform}
                                                       : std::vector<Transform>{Transform::Identity, Transform::Log};
    const CvReport rep = loo_cv(ts, mt, cands, opt.fit);
    const GPModel model = gp_fit_mle(ts, mt, rep.selected, opt.fit);
    models["models"][to_string(mt)] = model.to_json();
    ojson r = rep.to_json();
    r["baseline_mean_rmse"] = mean_only_loo_rmse(rep.observed);
    cv[to_string(mt)] = r;
    msg += " " + to_string(mt) + "=" + to_string(rep.selected);
  }
  write_json(ws / "models.json", models);
  write_json(ws / "cv_report.json", cv);
  record_stage(ws, "emulate", digest, config, {"models.json", "cv_report.json"});
  return {false, msg};
}

inline std::map<Metric, GPModel> load_models(const fs::path& ws, const TrainingSet& ts) {
  const ojson j = read_json(ws / "models.json");
  std::map<Metric, GPModel> out;
  for (auto it = j.at("models").begin(); it != j.at("models").end(); ++it) {
    const Metric mt = parse_metric(it.key());
    out.emplace(mt, GPModel::from_json(nlohmann::json::parse(it.value().dump()), ts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOptions {
  MetricMode mode = MetricMode::Both;
  ChainConfig chain;
  LikelihoodOptions likelihood;
  int densityGrid = 128;
  bool force = false;
};

struct CalibrationOutcome {
  StageOutcome stage;
  ojson summary;
  bool rhatOk = true;
};

inline fs::path posterior_dir(const fs::path& ws, MetricMode mode) { return ws / "posterior" / to_string(mode); }

inline CalibrationOutcome cmd_calibrate(const fs::path& ws, const CalibrateOptions& opt) {
  const ojson m = load_manifest(ws);
  const fs::path out = posterior_dir(ws, opt.mode);
  const std::string rel = "posterior/" + to_string(opt.mode);
  const ojson config{{"mode", to_string(opt.mode)},
                     {"chains", opt.chain.nChains},
                     {"iters", opt.chain.nIters},
                     {"burnin", opt.chain.burnIn},
                     {"adapt", opt.chain.adapt},
                     {"seed", opt.chain.seed},
                     {"fold_emulator_variance", opt.likelihood.foldEmulatorVariance},
                     {"density_grid", opt.densityGrid}};
  const std::string digest =
      Digest().update(config.dump()).update_file(ws / "models.json").update_file(ws / "metrics.csv").hex();
  const std::vector<std::string> outputs{rel + "/samples.csv", rel + "/summary.json"};
  if (!opt.force && stage_current(m, "calibrate:" + to_string(opt.mode), digest, ws, outputs)) {
    CalibrationOutcome c;
    c.summary = read_json(out / "summary.json");
    c.rhatOk = c.summary.value("rhat_ok", true);
    c.stage = {true, "calibrate " + to_string(opt.mode) + ": inputs unchanged, posterior is current"};
    return c;
  }

  const TrainingSet ts = load_training_set(ws);
  CalibrationProblem prob;
  prob.models = load_models(ws, ts);
  prob.mode = opt.mode;
  prob.likelihood = opt.likelihood;
  const auto bounds = manifest_bounds(m);
  for (Metric mt : prob.metrics())
    if (!prob.models.count(mt)) throw MissingArtifactError("models.json has no emulator for " + to_string(mt) + "; rerun emulate");
  prob.priors = Priors::from_training(ts, bounds, prob.metrics());
  const PosteriorChain post = run_mcmc(prob, opt.chain);

  fs::remove_all(out);
  fs::create_directories(out);
  {
    std::ofstream f(out / "samples.csv", std::ios::binary);
    f << "chain,iter";
    for (const auto& n : post.names) f << ',' << n;
    f << ",logpost\n";
    std::string line;
    for (std::size_t c = 0; c < post.chains.size(); ++c) {
      const auto& ch = post.chains[c];
      for (Eigen::Index r = 0; r < ch.samples.rows(); ++r) {
        line = std::to_string(c) + ',' + std::to_string(opt.chain.burnIn + r);
        for (Eigen::Index k = 0; k < ch.samples.cols(); ++k) line += ',' + format_double(ch.samples(r, k));
        line += ',' + format_double(ch.logpost(r)) + '\n';
        f << line;
      }
    }
  }

  const Eigen::MatrixXd all = post.merged();
  const auto truth = manifest_truth(m);
  ojson summary;
  summary["mode"] = to_string(opt.mode);
  summary["metrics"] = ojson::array();
  for (Metric mt : prob.metrics()) summary["metrics"].push_back(to_string(mt));
  summary["draws"] = all.rows();
  summary["acceptance"] = post.acceptance();
  summary["chain_acceptance"] = ojson::array();
  for (const auto& c : post.chains) summary["chain_acceptance"].push_back(c.acceptance);
  bool rhatOk = true;
  summary["parameters"] = ojson::object();
  for (std::size_t k = 0; k < post.names.size(); ++k) {
    std::vector<double> draws(all.rows());
    for (Eigen::Index r = 0; r < all.rows(); ++r) draws[static_cast<std::size_t>(r)] = all(r, static_cast<Eigen::Index>(k));
    const bool isTheta = k < bounds.size();
    MarginalSummary s = summarize_marginal(post.names[k], draws, isTheta ? bounds[k].lo : -INFINITY,
                                           isTheta ? bounds[k].hi : INFINITY);
    s.rhat = post.rhat[k];
    if (s.rhat && *s.rhat > 1.1) rhatOk = false;
    ojson pj = ojson::parse(to_json(s).dump());
    if (isTheta && truth) pj["truth_covered"] = s.covers((*truth)[k]);
    summary["parameters"][post.names[k]] = pj;
  }
  summary["rhat_ok"] = rhatOk;

  if (bounds.size() == 2) {
    std::vector<double> xs(all.rows()), ys(all.rows());
    for (Eigen::Index r = 0; r < all.rows(); ++r) {
      xs[static_cast<std::size_t>(r)] = all(r, 0);
      ys[static_cast<std::size_t>(r)] = all(r, 1);
    }
    const DensityGrid g = kde_2d(xs, ys, bounds[0], bounds[1], opt.densityGrid);
    summary["peak_ratio"] = g.peak_ratio();
    std::ofstream f(out / "density.csv", std::ios::binary);
    f << "theta_1,theta_2,density\n";
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) f << format_double(g.x(i)) << ',' << format_double(g.y(j)) << ',' << format_double(g.density(j, i)) << '\n';
  }
  write_json(out / "summary.json", summary);
  std::vector<std::string> outs = outputs;
  if (bounds.size() == 2) outs.push_back(rel + "/density.csv");
  record_stage(ws, "calibrate:" + to_string(opt.mode), digest, config, outs);

  CalibrationOutcome c;
  c.summary = summary;
  c.rhatOk = rhatOk;
  std::string msg = "calibrate " + to_string(opt.mode) + ": acceptance " + svg::num(post.acceptance());
  for (std::size_t k = 0; k < bounds.size(); ++k) {
    const auto& p = summary["parameters"][post.names[k]];
    msg += "; " + post.names[k] + " " + svg::num(p["mode"].get<double>()) + " (" + svg::num(p["lower95"].get<double>()) +
           ", " + svg::num(p["upper95"].get<double>()) + ")";
  }
  if (!rhatOk) msg += "; R-hat above 1.1";
  c.stage = {false, msg};
  return c;
}

// ---------------------------------------------------------------------------
// report

inline std::vector<MetricMode> calibrated_modes(const fs::path& ws) {
  std::vector<MetricMode> out;
  for (MetricMode md : {MetricMode::Both, MetricMode::Amplitude, MetricMode::Phase, MetricMode::Euclidean})
    if (fs::exists(posterior_dir(ws, md) / "summary.json")) out.push_back(md);
  return out;
}

inline Eigen::MatrixXd read_density(const fs::path& p, int& n) {
  const Table t = read_table(p);
  const std::size_t cells = t.rows.size();
  n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
  require(static_cast<std::size_t>(n) * n == cells, p.string() + ": density grid is not square");
  Eigen::MatrixXd d(n, n);
  const int c = t.require_column("density");
  for (std::size_t k = 0; k < cells; ++k) d(static_cast<Eigen::Index>(k) / n, static_cast<Eigen::Index>(k) % n) = t.number(k, c);
  return d;
}

inline svg::PlotFrame posterior_frame(const std::vector<Bounds>& b) { return svg::PlotFrame{b[0], b[1]}; }

inline StageOutcome cmd_report(const fs::path& ws) {
  std::vector<std::string> missing;
  for (const char* f : {"manifest.json", "metrics.csv", "cv_report.json", "models.json"})
    if (!fs::exists(ws / f)) missing.push_back((ws / f).string());
  const auto modes = fs::exists(ws) ? calibrated_modes(ws) : std::vector<MetricMode>{};
  if (modes.empty()) missing.push_back((ws / "posterior" / "<mode>" / "summary.json").string());
  if (!missing.empty()) {
    std::string msg = "report: missing artifacts:";
    for (const auto& f : missing) msg += "\n  " + f;
    throw MissingArtifactError(msg);
  }
  const ojson m = load_manifest(ws);
  const auto bounds = manifest_bounds(m);
  const auto truth = manifest_truth(m);
  const fs::path out = ws / "report";
  fs::create_directories(out);
  std::ostringstream txt;
  txt << "warpcal " << kToolVersion << " report for " << ws.filename().string() << "\n";
  txt << "kind: " << m.value("kind", std::string("?")) << "\n";
  if (truth) {
    txt << "truth:";
    for (double v : *truth) txt << ' ' << svg::num(v);
    txt << "\n";
  }

  const Table metrics = read_table(ws / "metrics.csv");
  {
    const int cc = metrics.require_column("converged");
    int conv = 0;
    for (const auto& r : metrics.rows) conv += r[static_cast<std::size_t>(cc)] == "1";
    txt << "\nregistration: " << metrics.rows.size() << " rows, " << conv << " converged\n";
    const auto da = metrics.numbers("d_a");
    txt << "  d_a mean " << svg::num(stats::mean(da)) << ", sd " << svg::num(std::sqrt(stats::variance(da))) << "\n";
  }

  // energy traces
  if (fs::exists(ws / "traces")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(ws / "traces")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::vector<std::pair<double, double>>> series;
    double xmax = 1.0, ymax = 0.0;
    for (const auto& f : files) {
      const Table t = read_table(f);
      std::vector<std::pair<double, double>> s;
      const auto it = t.numbers("iter");
      const auto en = t.numbers("energy");
      for (std::size_t k = 0; k < it.size(); ++k) {
        s.emplace_back(it[k], en[k]);
        xmax = std::max(xmax, it[k]);
        ymax = std::max(ymax, en[k]);
      }
      series.push_back(std::move(s));
    }
    svg::PlotFrame f{{0.0, xmax}, {0.0, ymax > 0 ? ymax : 1.0}};
    std::ofstream(out / "energy_traces.svg", std::ios::binary)
        << svg::line_plot(series, f, "iteration", "registration energy", "Registration energy traces");
  }

  // CV diagnostics
  const ojson cv = read_json(ws / "cv_report.json");
  txt << "\nemulators (leave-one-out):\n";
  for (auto it = cv.begin(); it != cv.end(); ++it) {
    const auto& r = it.value();
    txt << "  " << it.key() << ": selected " << r.value("selected", std::string("?"));
    const auto obs = r.at("observed").get<std::vector<double>>();
    for (const auto& c : r.at("candidates")) {
      if (c.value("skipped", false)) {
        txt << "; " << c.value("transform", std::string("?")) << " skipped";
        continue;
      }
      txt << "; " << c.value("transform", std::string("?")) << " rmse " << svg::num(c["rmse"].get<double>())
          << " coverage " << svg::num(c["coverage95"].get<double>());
      if (c.value("transform", std::string()) != r.value("selected", std::string())) continue;
      const auto mean = c.at("loo_mean").get<std::vector<double>>();
      const auto lo = c.at("loo_lower").get<std::vector<double>>();
      const auto hi = c.at("loo_upper").get<std::vector<double>>();
      std::vector<svg::Interval> pts;
      double a = obs[0], b = obs[0];
      for (std::size_t k = 0; k < obs.size(); ++k) {
        pts.push_back({obs[k], mean[k], lo[k], hi[k]});
        a = std::min({a, obs[k], mean[k]});
        b = std::max({b, obs[k], mean[k]});
      }
      const double pad = 0.05 * std::max(b - a, 1e-12);
      svg::PlotFrame f{{a - pad, b + pad}, {a - pad, b + pad}};
      std::ofstream(out / ("cv_" + it.key() + ".svg"), std::ios::binary)
          << svg::interval_plot(pts, f, "observed " + it.key(), "leave-one-out prediction", "Leave-one-out: " + it.key());
    }
    txt << "; mean-only rmse " << svg::num(r.value("baseline_mean_rmse", 0.0)) << "\n";
  }

  // posteriors
  txt << "\nposteriors (mode, 95% interval):\n";
  for (MetricMode md : modes) {
    const ojson s = read_json(posterior_dir(ws, md) / "summary.json");
    txt << "  " << to_string(md) << ":";
    for (auto it = s.at("parameters").begin(); it != s.at("parameters").end(); ++it) {
      const auto& p = it.value();
      txt << " " << it.key() << " " << svg::num(p["mode"].get<double>()) << " (" << svg::num(p["lower95"].get<double>())
          << ", " << svg::num(p["upper95"].get<double>()) << ")";
      if (!p["rhat"].is_null()) txt << " R-hat " << svg::num(p["rhat"].get<double>());
      txt << ";";
    }
    txt << " acceptance " << svg::num(s.value("acceptance", 0.0));
    if (s.contains("peak_ratio")) txt << "; peak/mean density " << svg::num(s["peak_ratio"].get<double>());
    txt << "\n";
    const fs::path dens = posterior_dir(ws, md) / "density.csv";
    if (bounds.size() == 2 && fs::exists(dens)) {
      int n = 0;
      const Eigen::MatrixXd d = read_density(dens, n);
      std::optional<std::pair<double, double>> tp;
      if (truth) tp = std::make_pair((*truth)[0], (*truth)[1]);
      std::ofstream(out / ("posterior_" + to_string(md) + ".svg"), std::ios::binary)
          << svg::heatmap(d, posterior_frame(bounds), tp, "theta_1", "theta_2", "Posterior density: " + to_string(md));
    }
  }
  std::ofstream(out / "summary.txt", std::ios::binary) << txt.str();
  return {false, "report written to " + out.string()};
}

}  // namespace warpcal
