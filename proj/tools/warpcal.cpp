// warpcal: batch front end for the registration / emulation / calibration pipeline.
//
// Exit codes: 0 success, 2 validation or missing input, 3 convergence problem.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "warpcal/workspace.hpp"

namespace {

using namespace warpcal;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;

struct Flags {
  std::string workspace = "warpcal_ws";
  bool force = false;
  std::uint64_t seed = 2024;

  // toy
  int grid = 64;
  int runs = 50;
  double theta1 = 0.3;
  double theta2 = 0.1;

  // init
  std::string observation;
  std::string design;
  std::vector<double> bounds;
  std::vector<double> truth;

  // register
  std::string recipe;
  std::optional<double> threshold;
  int basisK = 8;
  double step0 = 0.1;
  int maxIters = 200;
  std::vector<double> blur{4.0, 2.0};
  bool noBlur = false;
  bool includeSelf = false;

  // emulate
  std::string transform = "auto";

  // calibrate
  std::string metric = "both";
  int chains = 3;
  int iters = 30000;
  int burnin = 15000;
  bool noEmulatorVariance = false;
};

RegisterOptions register_options(const Flags& f) {
  RegisterOptions o;
  if (!f.recipe.empty()) o.variant = parse_recipe(f.recipe);
  o.threshold = f.threshold;
  o.cfg.K = f.basisK;
  o.cfg.step0 = f.step0;
  o.cfg.maxIters = f.maxIters;
  o.cfg.blurSchedule = f.noBlur ? std::vector<double>{} : f.blur;
  o.includeSelf = f.includeSelf;
  o.force = f.force;
  return o;
}

EmulateOptions emulate_options(const Flags& f) {
  EmulateOptions o;
  if (f.transform != "auto") o.transform = parse_transform(f.transform);
  o.force = f.force;
  return o;
}

CalibrateOptions calibrate_options(const Flags& f, MetricMode mode) {
  CalibrateOptions o;
  o.mode = mode;
  o.chain.nChains = f.chains;
  o.chain.nIters = f.iters;
  o.chain.burnIn = f.burnin;
  o.chain.seed = f.seed;
  o.likelihood.foldEmulatorVariance = !f.noEmulatorVariance;
  o.force = f.force;
  return o;
}

void say(const StageOutcome& s) { std::cout << s.message << (s.skipped ? " [skipped]" : "") << "\n"; }

int calibrate_modes(const Flags& f, const std::vector<MetricMode>& modes) {
  bool ok = true;
  for (MetricMode md : modes) {
    const CalibrationOutcome c = cmd_calibrate(f.workspace, calibrate_options(f, md));
    say(c.stage);
    ok = ok && c.rhatOk;
  }
  if (!ok) {
    std::cerr << "warning: Gelman-Rubin R-hat exceeds 1.1 for at least one parameter; artifacts were written\n";
    return kExitConvergence;
  }
  return kExitOk;
}

std::vector<MetricMode> modes_from_flag(const std::string& s, bool all) {
  if (all) return {MetricMode::Both, MetricMode::Amplitude, MetricMode::Phase, MetricMode::Euclidean};
  return {parse_metric_mode(s)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warpcal: calibrate computer models against images with warping distances"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--workspace,-w", f.workspace, "Workspace directory")->capture_default_str();
    sc->add_flag("--force", f.force, "Overwrite or recompute even when inputs are unchanged");
    sc->add_option("--seed", f.seed, "Seed for the design and the MCMC chains")->capture_default_str();
  };
  auto add_toy = [&](CLI::App* sc) {
    sc->add_option("--grid", f.grid, "Grid size (n x n)")->capture_default_str()->check(CLI::Range(8, 4096));
    sc->add_option("--runs,-N", f.runs, "Number of design runs")->capture_default_str()->check(CLI::PositiveNumber);
    sc->add_option("--theta1", f.theta1, "Synthetic truth, first component")->capture_default_str();
    sc->add_option("--theta2", f.theta2, "Synthetic truth, second component")->capture_default_str();
  };
  auto add_register = [&](CLI::App* sc) {
    sc->add_option("--recipe", f.recipe, "Image recipe (default from the workspace)")
        ->check(CLI::IsMember({"mag-angle", "grad", "grad-angle"}));
    sc->add_option("--threshold", f.threshold, "Jump magnitude threshold (default from the workspace)");
    sc->add_option("--basis-k", f.basisK, "Basis size K (2K^2 fields)")->capture_default_str();
    sc->add_option("--step0", f.step0, "Initial step length")->capture_default_str();
    sc->add_option("--max-iters", f.maxIters, "Iteration cap per pass")->capture_default_str();
    sc->add_option("--blur", f.blur, "Coarse-to-fine blur widths in cells, coarsest first")->capture_default_str();
    sc->add_flag("--no-blur", f.noBlur, "Register the full-resolution images only");
    sc->add_flag("--include-self", f.includeSelf, "Also register the observation to itself");
  };
  auto add_emulate = [&](CLI::App* sc) {
    sc->add_option("--transform", f.transform, "Response transform")
        ->check(CLI::IsMember({"auto", "identity", "log"}))
        ->capture_default_str();
  };
  auto add_calibrate = [&](CLI::App* sc) {
    sc->add_option("--metric", f.metric, "Distances entering the likelihood")
        ->check(CLI::IsMember({"both", "amplitude", "phase", "euclidean"}))
        ->capture_default_str();
    sc->add_option("--chains", f.chains, "Number of chains")->capture_default_str();
    sc->add_option("--iters", f.iters, "Iterations per chain")->capture_default_str();
    sc->add_option("--burnin", f.burnin, "Burn-in iterations per chain")->capture_default_str();
    sc->add_flag("--no-emulator-variance", f.noEmulatorVariance, "Use the emulator mean only in the likelihood");
  };

  auto* toy = app.add_subcommand("toy", "Generate the synthetic toy workspace (template, observation, LHS runs)");
  add_common(toy);
  add_toy(toy);

  auto* init = app.add_subcommand("init", "Create a workspace from external jump-field files");
  add_common(init);
  init->add_option("--observation", f.observation, "Observed jump field (directory or field.json)")->required();
  init->add_option("--design", f.design, "Design csv with theta_* columns and a path column")->required();
  init->add_option("--bounds", f.bounds, "Parameter box as lo1 hi1 lo2 hi2 ... (default: design range)");
  init->add_option("--truth", f.truth, "Known true parameters, if any");
  init->add_option("--recipe", f.recipe, "Image recipe")->check(CLI::IsMember({"mag-angle", "grad", "grad-angle"}));
  init->add_option("--threshold", f.threshold, "Jump magnitude threshold");

  auto* reg = app.add_subcommand("register", "Register every run to the observation");
  add_common(reg);
  add_register(reg);

  auto* emu = app.add_subcommand("emulate", "Fit Gaussian-process emulators and cross-validate");
  add_common(emu);
  add_emulate(emu);

  auto* cal = app.add_subcommand("calibrate", "Sample the calibration posterior");
  add_common(cal);
  add_calibrate(cal);

  auto* rep = app.add_subcommand("report", "Write plots and a text summary");
  add_common(rep);

  auto* run = app.add_subcommand("run", "Run every stage (toy workspace is created if absent)");
  add_common(run);
  add_toy(run);
  add_register(run);
  add_emulate(run);
  add_calibrate(run);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) {
      ToyOptions o{{f.theta1, f.theta2}, f.runs, f.grid, f.seed, "branching_crack", f.force};
      say(cmd_toy(f.workspace, o));
    } else if (*init) {
      InitOptions o;
      o.observation = f.observation;
      o.design = f.design;
      require(f.bounds.size() % 2 == 0, "--bounds needs lo/hi pairs");
      for (std::size_t k = 0; k + 1 < f.bounds.size(); k += 2) o.bounds.push_back({f.bounds[k], f.bounds[k + 1]});
      if (!f.truth.empty()) o.truth = f.truth;
      if (!f.recipe.empty()) o.recipe.variant = parse_recipe(f.recipe);
      if (f.threshold) o.recipe.threshold = *f.threshold;
      o.force = f.force;
      say(cmd_init(f.workspace, o));
    } else if (*reg) {
      say(cmd_register(f.workspace, register_options(f)));
    } else if (*emu) {
      say(cmd_emulate(f.workspace, emulate_options(f)));
    } else if (*cal) {
      return calibrate_modes(f, modes_from_flag(f.metric, false));
    } else if (*rep) {
      say(cmd_report(f.workspace));
    } else if (*run) {
      if (!fs::exists(manifest_path(f.workspace)) || f.force) {
        ToyOptions o{{f.theta1, f.theta2}, f.runs, f.grid, f.seed, "branching_crack", true};
        say(cmd_toy(f.workspace, o));
      }
      f.force = false;  // the workspace is fresh or reused; digests decide the rest
      say(cmd_register(f.workspace, register_options(f)));
      say(cmd_emulate(f.workspace, emulate_options(f)));
      const bool metricGiven = run->count("--metric") > 0;
      const int code = calibrate_modes(f, modes_from_flag(f.metric, !metricGiven));
      say(cmd_report(f.workspace));
      return code;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
