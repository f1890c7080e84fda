#pragma once

// Bayesian calibration against the self-registration observation Z_d = 0.
//
// Posterior over (theta, psi2_k for every active metric k):
//   theta ~ Uniform(Theta), psi2_k ~ InvGamma(a_k, b_k), b_k = a_k d_{k,10th}^2,
//   0 | theta, psi2_k ~ half-normal with scale w_k = sqrt(psi2_k + v_k(theta))
//   around the emulator's predicted distance m_k(theta).
// Sampling is component-wise random-walk Metropolis-Hastings; psi2 is moved
// on the log scale with the Jacobian included.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "warpcal/design.hpp"
#include "warpcal/emulator.hpp"
#include "warpcal/error.hpp"
#include "warpcal/parallel.hpp"
#include "warpcal/stats.hpp"

namespace warpcal {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct InverseGamma {
  double shape = 20.0;
  double scale = 1.0;

  double log_density(double x) const {
    if (!(x > 0.0)) return kNegInf;
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
  }
  double mode() const { return scale / (shape + 1.0); }
  double mean() const { return shape > 1.0 ? scale / (shape - 1.0) : std::numeric_limits<double>::infinity(); }
};

/// Metrics entering the likelihood, in a fixed order.
enum class MetricMode { Both, Amplitude, Phase, Euclidean };

inline std::vector<Metric> active_metrics(MetricMode m) {
  switch (m) {
    case MetricMode::Both: return {Metric::Amplitude, Metric::Phase};
    case MetricMode::Amplitude: return {Metric::Amplitude};
    case MetricMode::Phase: return {Metric::Phase};
    case MetricMode::Euclidean: return {Metric::Euclidean};
  }
  return {};
}

inline MetricMode parse_metric_mode(const std::string& s) {
  if (s == "both") return MetricMode::Both;
  if (s == "amplitude") return MetricMode::Amplitude;
  if (s == "phase") return MetricMode::Phase;
  if (s == "euclidean") return MetricMode::Euclidean;
  throw ValidationError("unknown metric mode '" + s + "' (expected both, amplitude, phase or euclidean)");
}

inline std::string to_string(MetricMode m) {
  switch (m) {
    case MetricMode::Both: return "both";
    case MetricMode::Amplitude: return "amplitude";
    case MetricMode::Phase: return "phase";
    case MetricMode::Euclidean: return "euclidean";
  }
  return "?";
}

/// Column label of a discrepancy variance: psi2_a, psi2_p, psi2_e.
inline std::string psi2_name(Metric m) {
  switch (m) {
    case Metric::Amplitude: return "psi2_a";
    case Metric::Phase: return "psi2_p";
    case Metric::Euclidean: return "psi2_e";
  }
  return "psi2_?";
}

struct Priors {
  std::vector<Bounds> thetaBounds;
  std::map<Metric, InverseGamma> discrepancy;

  static constexpr double kShape = 20.0;

  /// IG(a, a d_10^2) with d_10 the 10th percentile of the training metric (original scale).
  static InverseGamma discrepancy_prior(const Eigen::VectorXd& trainingMetric, double shape = kShape) {
    const double d10 = stats::quantile(std::vector<double>(trainingMetric.data(), trainingMetric.data() + trainingMetric.size()), 0.10);
    require(d10 > 0.0, "Priors: 10th percentile of the training metric must be positive");
    return InverseGamma{shape, shape * d10 * d10};
  }

  static Priors from_training(const TrainingSet& ts, const std::vector<Bounds>& thetaBounds,
                              const std::vector<Metric>& metrics, double shape = kShape) {
    Priors p;
    p.thetaBounds = thetaBounds;
    for (Metric m : metrics) {
      ts.validate(m);
      p.discrepancy[m] = discrepancy_prior(ts.metrics.at(m), shape);
    }
    return p;
  }
};

/// Uniform prior on theta (0 inside, -inf outside) plus IG log densities of every psi2.
inline double log_prior(std::span<const double> theta, const std::map<Metric, double>& psi2, const Priors& pr) {
  require(theta.size() == pr.thetaBounds.size(), "log_prior: theta dimension mismatch");
  for (std::size_t j = 0; j < theta.size(); ++j)
    if (!(theta[j] >= pr.thetaBounds[j].lo && theta[j] <= pr.thetaBounds[j].hi)) return kNegInf;
  double lp = 0.0;
  for (const auto& [m, v] : psi2) {
    const auto it = pr.discrepancy.find(m);
    require(it != pr.discrepancy.end(), "log_prior: no prior for " + psi2_name(m));
    lp += it->second.log_density(v);
  }
  return lp;
}

struct LikelihoodOptions {
  bool foldEmulatorVariance = true;  // w^2 = psi2 + v(theta); false uses psi2 alone
};

/// log of the half-normal density 2 phi(m / w) / w.
inline double half_normal_log_density(double m, double w) {
  return std::log(2.0) - 0.5 * (m / w) * (m / w) - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(w);
}

/// Sum over the metrics in psi2 of the half-normal log-likelihood of the zero observation.
inline double log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& theta, const std::map<Metric, double>& psi2,
                             const std::map<Metric, GPModel>& models, const LikelihoodOptions& opt = {}) {
  double ll = 0.0;
  for (const auto& [m, p2] : psi2) {
    const auto it = models.find(m);
    require(it != models.end(), "log_likelihood: no emulator for " + to_string(m));
    const Prediction pred = it->second.predict(theta);
    const double w2 = p2 + (opt.foldEmulatorVariance ? pred.var : 0.0);
    if (!(w2 > 0.0)) throw ValidationError("log_likelihood: nonpositive total variance for " + to_string(m));
    ll += half_normal_log_density(pred.mean, std::sqrt(w2));
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Generic component-wise Metropolis-Hastings

struct ParamSpec {
  enum class Kind { Bounded, Positive };  // Positive parameters move on the log scale
  std::string name;
  Kind kind = Kind::Bounded;
  Bounds bounds{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  std::optional<double> init;  // Bounded without init: uniform draw per chain
  double proposalScale = 0.1;  // on the sampled scale
};

struct ChainConfig {
  int nChains = 3;
  int nIters = 30000;
  int burnIn = 15000;
  std::vector<double> proposalScales;  // overrides ParamSpec::proposalScale when non-empty
  bool adapt = true;
  std::uint64_t seed = 1;
  int adaptWindow = 50;
  double targetLow = 0.20;
  double targetHigh = 0.30;
  std::size_t recordDecisions = 0;  // per chain, for auditing acceptance decisions

  void validate(std::size_t nparams) const {
    require(nChains >= 1, "ChainConfig: nChains must be >= 1");
    require(nIters >= 1 && burnIn >= 0 && burnIn < nIters, "ChainConfig: need 0 <= burnIn < nIters");
    require(proposalScales.empty() || proposalScales.size() == nparams, "ChainConfig: proposal scale count mismatch");
    for (double s : proposalScales) require(s > 0.0, "ChainConfig: proposal scales must be positive");
  }
};

/// One Metropolis-Hastings decision: accept iff u < min(1, exp(logProposed - logCurrent)).
struct MhDecision {
  int iter = 0;
  int param = 0;
  double logCurrent = 0.0;   // log posterior on the sampled scale
  double logProposed = 0.0;
  double acceptProb = 0.0;
  double u = 0.0;
  bool accepted = false;
};

struct ChainResult {
  Eigen::MatrixXd samples;  // post burn-in draws, natural scale
  Eigen::VectorXd logpost;  // log target (natural scale) at every retained draw
  std::vector<double> acceptance;  // per parameter, post burn-in
  std::vector<double> finalScales;
  std::vector<MhDecision> decisions;

  double overall_acceptance() const { return stats::mean(acceptance); }
};

struct PosteriorChain {
  std::vector<std::string> names;
  std::vector<ChainResult> chains;
  std::vector<std::optional<double>> rhat;  // nullopt when undefined (constant chains)

  Eigen::MatrixXd merged() const {
    Eigen::Index rows = 0;
    for (const auto& c : chains) rows += c.samples.rows();
    Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(names.size()));
    Eigen::Index r = 0;
    for (const auto& c : chains) {
      out.middleRows(r, c.samples.rows()) = c.samples;
      r += c.samples.rows();
    }
    return out;
  }

  double acceptance() const {
    double s = 0.0;
    for (const auto& c : chains) s += c.overall_acceptance();
    return chains.empty() ? 0.0 : s / static_cast<double>(chains.size());
  }

  int index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
};

/// Classical potential scale reduction sqrt((W (n-1)/n + B/n) / W) per
/// column; chains must have equal length. nullopt when W = 0.
inline std::vector<std::optional<double>> gelman_rubin(const std::vector<Eigen::MatrixXd>& chains) {
  require(chains.size() >= 2, "gelman_rubin: need at least two chains");
  const Eigen::Index n = chains.front().rows(), p = chains.front().cols();
  require(n >= 2, "gelman_rubin: chains need at least two draws");
  for (const auto& c : chains) require(c.rows() == n && c.cols() == p, "gelman_rubin: chains must have equal shape");
  const double m = static_cast<double>(chains.size()), nd = static_cast<double>(n);
  std::vector<std::optional<double>> out(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<double> means, vars;
    for (const auto& c : chains) {
      const double mu = c.col(j).mean();
      means.push_back(mu);
      vars.push_back((c.col(j).array() - mu).square().sum() / (nd - 1.0));
    }
    const double W = stats::mean(vars);
    const double grand = stats::mean(means);
    double B = 0.0;
    for (double mu : means) B += (mu - grand) * (mu - grand);
    B *= nd / (m - 1.0);
    if (!(W > 0.0)) continue;
    out[static_cast<std::size_t>(j)] = std::sqrt((W * (nd - 1.0) / nd + B / nd) / W);
  }
  return out;
}

using LogTarget = std::function<double(std::span<const double>)>;

namespace detail {

inline ChainResult run_chain(const LogTarget& target, const std::vector<ParamSpec>& specs, const ChainConfig& cfg,
                             int chainIndex) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chainIndex), 0x6d636d63u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t p = specs.size();
  std::vector<double> scale(p);
  for (std::size_t k = 0; k < p; ++k) scale[k] = cfg.proposalScales.empty() ? specs[k].proposalScale : cfg.proposalScales[k];

  // State on the natural scale; Positive parameters are proposed in log space.
  std::vector<double> x(p);
  for (std::size_t k = 0; k < p; ++k) {
    if (specs[k].init) {
      x[k] = *specs[k].init;
    } else {
      require(std::isfinite(specs[k].bounds.lo) && std::isfinite(specs[k].bounds.hi),
              "run_mcmc: parameter " + specs[k].name + " needs an initial value or finite bounds");
      x[k] = specs[k].bounds.lo + unit(rng) * specs[k].bounds.width();
    }
  }
  auto jacobian = [&](const std::vector<double>& v) {
    double j = 0.0;
    for (std::size_t k = 0; k < p; ++k)
      if (specs[k].kind == ParamSpec::Kind::Positive) j += std::log(v[k]);
    return j;
  };
  auto in_support = [&](const std::vector<double>& v) {
    for (std::size_t k = 0; k < p; ++k) {
      if (specs[k].kind == ParamSpec::Kind::Positive && !(v[k] > 0.0)) return false;
      if (!(v[k] >= specs[k].bounds.lo && v[k] <= specs[k].bounds.hi)) return false;
    }
    return true;
  };
  auto log_post = [&](const std::vector<double>& v) {
    if (!in_support(v)) return kNegInf;
    const double t = target(v);
    return std::isnan(t) ? kNegInf : t;
  };

  double lt = log_post(x);
  if (!std::isfinite(lt)) throw ValidationError("run_mcmc: initial state has zero posterior density");
  double lcur = lt + jacobian(x);

  const int kept = cfg.nIters - cfg.burnIn;
  ChainResult res;
  res.samples.resize(kept, static_cast<Eigen::Index>(p));
  res.logpost.resize(kept);
  std::vector<long> accepts(p, 0), windowAccepts(p, 0);

  std::vector<double> y = x;
  for (int it = 0; it < cfg.nIters; ++it) {
    for (std::size_t k = 0; k < p; ++k) {
      y = x;
      if (specs[k].kind == ParamSpec::Kind::Positive)
        y[k] = std::exp(std::log(x[k]) + scale[k] * normal(rng));
      else
        y[k] = x[k] + scale[k] * normal(rng);
      const double ly = log_post(y);
      const double lprop = std::isfinite(ly) ? ly + jacobian(y) : kNegInf;
      const double prob = std::isfinite(lprop) ? std::min(1.0, std::exp(lprop - lcur)) : 0.0;
      const double u = unit(rng);
      const bool accept = u < prob;
      if (res.decisions.size() < cfg.recordDecisions)
        res.decisions.push_back({it, static_cast<int>(k), lcur, lprop, prob, u, accept});
      if (accept) {
        x[k] = y[k];
        lt = ly;
        lcur = lprop;
        ++windowAccepts[k];
        if (it >= cfg.burnIn) ++accepts[k];
      }
    }
    if (cfg.adapt && it < cfg.burnIn && (it + 1) % cfg.adaptWindow == 0) {
      for (std::size_t k = 0; k < p; ++k) {
        const double rate = static_cast<double>(windowAccepts[k]) / cfg.adaptWindow;
        if (rate < cfg.targetLow) scale[k] *= 0.8;
        else if (rate > cfg.targetHigh) scale[k] *= 1.25;
        windowAccepts[k] = 0;
      }
    }
    if (it >= cfg.burnIn) {
      const Eigen::Index r = it - cfg.burnIn;
      for (std::size_t k = 0; k < p; ++k) res.samples(r, static_cast<Eigen::Index>(k)) = x[k];
      res.logpost(r) = lt;
    }
  }
  for (std::size_t k = 0; k < p; ++k) res.acceptance.push_back(static_cast<double>(accepts[k]) / kept);
  res.finalScales = scale;
  return res;
}

}  // namespace detail

/// Runs cfg.nChains independently seeded chains (concurrently) and merges the
/// post burn-in draws. target is the log posterior on the natural scale.
inline PosteriorChain run_mcmc(const LogTarget& target, const std::vector<ParamSpec>& specs, const ChainConfig& cfg) {
  require(!specs.empty(), "run_mcmc: no parameters");
  cfg.validate(specs.size());
  PosteriorChain post;
  for (const auto& s : specs) post.names.push_back(s.name);
  post.chains.resize(static_cast<std::size_t>(cfg.nChains));
  parallel_for(static_cast<std::size_t>(cfg.nChains), [&](std::size_t c) {
    post.chains[c] = detail::run_chain(target, specs, cfg, static_cast<int>(c));
  });
  for (std::size_t c = 0; c < post.chains.size(); ++c) {
    const auto& acc = post.chains[c].acceptance;
    if (std::all_of(acc.begin(), acc.end(), [](double a) { return a == 0.0; }))
      throw ConvergenceError("run_mcmc: chain " + std::to_string(c) + " rejected every proposal after adaptation");
  }
  if (post.chains.size() >= 2) {
    std::vector<Eigen::MatrixXd> draws;
    for (const auto& c : post.chains) draws.push_back(c.samples);
    post.rhat = gelman_rubin(draws);
  } else {
    post.rhat.assign(specs.size(), std::nullopt);
  }
  return post;
}

/// Everything needed to evaluate the calibration posterior.
struct CalibrationProblem {
  std::map<Metric, GPModel> models;
  Priors priors;
  MetricMode mode = MetricMode::Phase;
  LikelihoodOptions likelihood;

  std::vector<Metric> metrics() const { return active_metrics(mode); }
  std::size_t dim() const { return priors.thetaBounds.size(); }

  std::vector<ParamSpec> parameters() const {
    std::vector<ParamSpec> specs;
    for (std::size_t j = 0; j < dim(); ++j) {
      ParamSpec s;
      s.name = "theta_" + std::to_string(j + 1);
      s.kind = ParamSpec::Kind::Bounded;
      s.bounds = priors.thetaBounds[j];
      s.proposalScale = 0.1 * priors.thetaBounds[j].width();
      specs.push_back(s);
    }
    for (Metric m : metrics()) {
      ParamSpec s;
      s.name = psi2_name(m);
      s.kind = ParamSpec::Kind::Positive;
      s.bounds = {0.0, std::numeric_limits<double>::infinity()};
      s.init = priors.discrepancy.at(m).mode();
      s.proposalScale = 0.2;
      specs.push_back(s);
    }
    return specs;
  }

  double log_posterior(std::span<const double> x) const {
    const std::size_t d = dim();
    const auto ms = metrics();
    std::map<Metric, double> psi2;
    for (std::size_t k = 0; k < ms.size(); ++k) psi2[ms[k]] = x[d + k];
    const double lp = log_prior(x.first(d), psi2, priors);
    if (!std::isfinite(lp)) return kNegInf;
    const Eigen::Map<const Eigen::VectorXd> theta(x.data(), static_cast<Eigen::Index>(d));
    return lp + log_likelihood(theta, psi2, models, likelihood);
  }
};

inline PosteriorChain run_mcmc(const CalibrationProblem& problem, const ChainConfig& cfg) {
  return run_mcmc([&problem](std::span<const double> x) { return problem.log_posterior(x); }, problem.parameters(), cfg);
}

}  // namespace warpcal
