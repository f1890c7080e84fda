#pragma once

// Independent Gaussian-process emulators for scalar distance metrics:
//   d_k ~ MN(X beta_k, Sigma(xi_k)),  C(t, t') = sigma2 exp(-sum_j |t_j - t'_j| / rho_j) + tau2 1(t = t')
// with X = [1, theta]. beta is profiled out by generalized least squares;
// the covariance parameters are fitted by maximum likelihood with a seeded,
// multi-start Nelder-Mead search on the log scale.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "warpcal/design.hpp"
#include "warpcal/error.hpp"
#include "warpcal/nelder_mead.hpp"
#include "warpcal/stats.hpp"

namespace warpcal {

enum class Metric { Amplitude, Phase, Euclidean };
enum class Transform { Identity, Log };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::Amplitude: return "d_a";
    case Metric::Phase: return "d_p";
    case Metric::Euclidean: return "d_euclid";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "d_a" || s == "amplitude") return Metric::Amplitude;
  if (s == "d_p" || s == "phase") return Metric::Phase;
  if (s == "d_euclid" || s == "euclidean") return Metric::Euclidean;
  throw ValidationError("unknown metric '" + s + "'");
}

inline std::string to_string(Transform t) { return t == Transform::Log ? "log" : "identity"; }

inline Transform parse_transform(const std::string& s) {
  if (s == "identity") return Transform::Identity;
  if (s == "log") return Transform::Log;
  throw ValidationError("unknown transform '" + s + "'");
}

/// Design inputs plus one response vector per metric (original scale).
struct TrainingSet {
  Eigen::MatrixXd theta;        // N x d, raw parameter values
  std::vector<Bounds> bounds;   // standardization box; theta is mapped to [0,1]^d
  std::map<Metric, Eigen::VectorXd> metrics;

  int size() const { return static_cast<int>(theta.rows()); }
  int dim() const { return static_cast<int>(theta.cols()); }

  /// Bounds from the column ranges of theta.
  static std::vector<Bounds> range_bounds(const Eigen::MatrixXd& theta) {
    std::vector<Bounds> b;
    for (Eigen::Index j = 0; j < theta.cols(); ++j) {
      double lo = theta.col(j).minCoeff(), hi = theta.col(j).maxCoeff();
      if (hi <= lo) hi = lo + 1.0;
      b.push_back({lo, hi});
    }
    return b;
  }

  Eigen::VectorXd standardize(const Eigen::Ref<const Eigen::VectorXd>& t) const {
    Eigen::VectorXd u(t.size());
    for (Eigen::Index j = 0; j < t.size(); ++j) u(j) = (t(j) - bounds[j].lo) / bounds[j].width();
    return u;
  }

  Eigen::MatrixXd standardized_theta() const {
    Eigen::MatrixXd u(theta.rows(), theta.cols());
    for (Eigen::Index i = 0; i < theta.rows(); ++i) u.row(i) = standardize(theta.row(i).transpose()).transpose();
    return u;
  }

  /// N x (d+1) covariate matrix [1, theta] (standardized theta).
  Eigen::MatrixXd covariates() const {
    Eigen::MatrixXd X(theta.rows(), theta.cols() + 1);
    X.col(0).setOnes();
    X.rightCols(theta.cols()) = standardized_theta();
    return X;
  }

  /// Fitting needs N >= d + 2; a model with given hyperparameters only needs check_values.
  void validate(Metric m) const {
    require(theta.rows() >= theta.cols() + 2, "TrainingSet: need N >= d + 2 design points");
    check_values(m);
  }

  void check_values(Metric m) const {
    require(theta.rows() >= 1, "TrainingSet: no design points");
    require(static_cast<int>(bounds.size()) == dim(), "TrainingSet: bounds do not match theta columns");
    const auto it = metrics.find(m);
    require(it != metrics.end(), "TrainingSet: metric " + to_string(m) + " is missing");
    require(it->second.size() == theta.rows(), "TrainingSet: metric length differs from design size");
    for (Eigen::Index i = 0; i < it->second.size(); ++i)
      require(std::isfinite(it->second(i)) && it->second(i) >= 0.0,
              "TrainingSet: metric " + to_string(m) + " must be finite and nonnegative");
  }

  /// Response on the modelling scale.
  Eigen::VectorXd response(Metric m, Transform tr) const {
    check_values(m);
    Eigen::VectorXd y = metrics.at(m);
    if (tr == Transform::Log) {
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        require(y(i) > 0.0, "TrainingSet: log transform needs strictly positive " + to_string(m));
        y(i) = std::log(y(i));
      }
    }
    return y;
  }
};

struct GPHyperParams {
  Eigen::VectorXd rho;  // range per dimension (standardized scale)
  double sigma2 = 1.0;  // partial sill
  double tau2 = 0.0;    // nugget

  void validate() const {
    require(rho.size() >= 1, "GPHyperParams: rho is empty");
    for (Eigen::Index j = 0; j < rho.size(); ++j) require(rho(j) > 0.0, "GPHyperParams: rho must be positive");
    require(sigma2 > 0.0, "GPHyperParams: sigma2 must be positive");
    require(tau2 >= 0.0, "GPHyperParams: tau2 must be nonnegative");
  }
};

/// sigma2 exp(-sum_j |t1_j - t2_j| / rho_j) + tau2 [t1 == t2].
inline double cov_exponential(const Eigen::Ref<const Eigen::VectorXd>& t1, const Eigen::Ref<const Eigen::VectorXd>& t2,
                              const GPHyperParams& h) {
  require(t1.size() == t2.size() && t1.size() == h.rho.size(), "cov_exponential: dimension mismatch");
  double s = 0.0;
  bool same = true;
  for (Eigen::Index j = 0; j < t1.size(); ++j) {
    const double d = std::abs(t1(j) - t2(j));
    same = same && d == 0.0;
    s += d / h.rho(j);
  }
  return h.sigma2 * std::exp(-s) + (same ? h.tau2 : 0.0);
}

inline Eigen::MatrixXd covariance_matrix(const Eigen::MatrixXd& u, const GPHyperParams& h) {
  const Eigen::Index n = u.rows();
  Eigen::MatrixXd S(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S(i, i) = h.sigma2 + h.tau2;
    for (Eigen::Index k = 0; k < i; ++k) {
      double s = 0.0;
      bool same = true;
      for (Eigen::Index j = 0; j < u.cols(); ++j) {
        const double d = std::abs(u(i, j) - u(k, j));
        same = same && d == 0.0;
        s += d / h.rho(j);
      }
      S(i, k) = S(k, i) = h.sigma2 * std::exp(-s) + (same ? h.tau2 : 0.0);
    }
  }
  return S;
}

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093453;

/// GLS estimate of beta and the NLL at it, given the Cholesky factor of Sigma.
struct GlsFit {
  Eigen::VectorXd beta;
  double nll = std::numeric_limits<double>::infinity();
};

inline double nll_from_factor(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& resid) {
  const Eigen::MatrixXd& L = llt.matrixLLT();
  const Eigen::VectorXd z = llt.matrixL().solve(resid);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
  return 0.5 * (z.squaredNorm() + logdet + static_cast<double>(resid.size()) * kLog2Pi);
}

inline std::optional<GlsFit> gls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const Eigen::LLT<Eigen::MatrixXd>& llt) {
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::MatrixXd LX = llt.matrixL().solve(X);
  const Eigen::VectorXd Ly = llt.matrixL().solve(y);
  const Eigen::MatrixXd XtSX = LX.transpose() * LX;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(XtSX);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  GlsFit fit;
  fit.beta = ldlt.solve(LX.transpose() * Ly);
  fit.nll = nll_from_factor(llt, y - X * fit.beta);
  if (!std::isfinite(fit.nll)) return std::nullopt;
  return fit;
}

}  // namespace detail

/// Multivariate-normal negative log-likelihood of one metric at (beta, h);
/// +infinity when Sigma(h) is not numerically positive definite.
inline double gp_neg_log_lik(const TrainingSet& ts, Metric metric, const Eigen::VectorXd& beta, const GPHyperParams& h,
                             Transform tr = Transform::Identity) {
  h.validate();
  const Eigen::VectorXd y = ts.response(metric, tr);
  const Eigen::MatrixXd X = ts.covariates();
  require(beta.size() == X.cols(), "gp_neg_log_lik: beta must have d + 1 entries");
  Eigen::LLT<Eigen::MatrixXd> llt(covariance_matrix(ts.standardized_theta(), h));
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  return detail::nll_from_factor(llt, y - X * beta);
}

struct Prediction {
  double mean = 0.0;        // original scale
  double var = 0.0;         // original scale
  double latentMean = 0.0;  // modelling scale
  double latentVar = 0.0;
  bool extrapolated = false;  // more than 10% outside the standardization box
};

/// A fitted, immutable emulator for one metric.
class GPModel {
public:
  GPModel() = default;

  GPModel(Metric metric, Transform transform, const TrainingSet& ts, Eigen::VectorXd beta, GPHyperParams hyper,
          double nll = std::numeric_limits<double>::quiet_NaN())
      : metric_(metric), transform_(transform), bounds_(ts.bounds), u_(ts.standardized_theta()),
        y_(ts.response(metric, transform)), beta_(std::move(beta)), hyper_(std::move(hyper)), nll_(nll) {
    hyper_.validate();
    require(beta_.size() == u_.cols() + 1, "GPModel: beta must have d + 1 entries");
    factorize();
  }

  Metric metric() const { return metric_; }
  Transform transform() const { return transform_; }
  const Eigen::VectorXd& beta() const { return beta_; }
  const GPHyperParams& hyper() const { return hyper_; }
  const std::vector<Bounds>& bounds() const { return bounds_; }
  double nll() const { return nll_; }
  int size() const { return static_cast<int>(u_.rows()); }
  int dim() const { return static_cast<int>(u_.cols()); }
  const Eigen::MatrixXd& standardized_design() const { return u_; }
  const Eigen::VectorXd& latent_response() const { return y_; }

  /// Plug-in conditional distribution of the metric at raw parameter t.
  Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& t) const {
    require(t.size() == dim(), "gp_predict: parameter dimension mismatch");
    Eigen::VectorXd u(dim());
    bool extrap = false;
    for (int j = 0; j < dim(); ++j) {
      u(j) = (t(j) - bounds_[j].lo) / bounds_[j].width();
      extrap = extrap || u(j) < -0.1 || u(j) > 1.1;
    }
    Eigen::VectorXd k(size());
    for (int i = 0; i < size(); ++i) k(i) = cov_exponential(u, u_.row(i).transpose(), hyper_);
    double mu = beta_(0) + u.dot(beta_.tail(dim())) + k.dot(alpha_);
    const Eigen::VectorXd w = llt_.matrixL().solve(k);
    double v = std::max(0.0, hyper_.sigma2 + hyper_.tau2 - w.squaredNorm());

    Prediction p;
    p.latentMean = mu;
    p.latentVar = v;
    p.extrapolated = extrap;
    if (transform_ == Transform::Log) {
      p.mean = std::exp(mu + 0.5 * v);
      p.var = std::expm1(v) * std::exp(2.0 * mu + v);
    } else {
      p.mean = mu;
      p.var = v;
    }
    return p;
  }

  /// Closed-form leave-one-out predictions on the modelling scale (beta and
  /// hyperparameters held fixed): mean_i = y_i - a_i / Q_ii, var_i = 1 / Q_ii
  /// with Q = Sigma^{-1}, a = Q (y - X beta).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> loo_latent() const {
    const Eigen::MatrixXd Q = llt_.solve(Eigen::MatrixXd::Identity(size(), size()));
    Eigen::VectorXd m(size()), v(size());
    for (int i = 0; i < size(); ++i) {
      v(i) = 1.0 / Q(i, i);
      m(i) = y_(i) - alpha_(i) * v(i);
    }
    return {m, v};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metric"] = to_string(metric_);
    j["transform"] = to_string(transform_);
    j["beta"] = std::vector<double>(beta_.data(), beta_.data() + beta_.size());
    j["rho"] = std::vector<double>(hyper_.rho.data(), hyper_.rho.data() + hyper_.rho.size());
    j["sigma2"] = hyper_.sigma2;
    j["tau2"] = hyper_.tau2;
    j["nll"] = std::isfinite(nll_) ? nlohmann::json(nll_) : nlohmann::json(nullptr);
    return j;
  }

  /// Rebuilds a model from its JSON record and the training set it was fitted on.
  static GPModel from_json(const nlohmann::json& j, const TrainingSet& ts) {
    GPHyperParams h;
    const auto rho = j.at("rho").get<std::vector<double>>();
    h.rho = Eigen::Map<const Eigen::VectorXd>(rho.data(), static_cast<Eigen::Index>(rho.size()));
    h.sigma2 = j.at("sigma2").get<double>();
    h.tau2 = j.at("tau2").get<double>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    const double nll = j.contains("nll") && !j["nll"].is_null() ? j["nll"].get<double>()
                                                                : std::numeric_limits<double>::quiet_NaN();
    return GPModel(parse_metric(j.at("metric").get<std::string>()), parse_transform(j.at("transform").get<std::string>()),
                   ts, Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size())), h, nll);
  }

private:
  void factorize() {
    llt_.compute(covariance_matrix(u_, hyper_));
    if (llt_.info() != Eigen::Success) throw ValidationError("GPModel: covariance matrix is not positive definite");
    Eigen::MatrixXd X(u_.rows(), u_.cols() + 1);
    X.col(0).setOnes();
    X.rightCols(u_.cols()) = u_;
    alpha_ = llt_.solve(y_ - X * beta_);
  }

  Metric metric_ = Metric::Amplitude;
  Transform transform_ = Transform::Identity;
  std::vector<Bounds> bounds_;
  Eigen::MatrixXd u_;
  Eigen::VectorXd y_;
  Eigen::VectorXd beta_;
  GPHyperParams hyper_;
  double nll_ = std::numeric_limits<double>::quiet_NaN();
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

inline Prediction gp_predict(const GPModel& m, const Eigen::Ref<const Eigen::VectorXd>& t) { return m.predict(t); }

struct FitOptions {
  int restarts = 8;
  std::uint64_t seed = 20240601;
  std::optional<double> fixedTau2;  // hold the nugget at this value instead of fitting it
  double nuggetFloor = 1e-8;        // tau2 >= nuggetFloor * sigma2
  NelderMeadOptions simplex{0.5, 1500, 1e-10, 1e-8};
};

struct FitDiagnostics {
  std::vector<double> startNll;  // profiled NLL at every restart's initial point
  std::vector<double> finalNll;  // NLL reached from every restart
};

namespace detail {

// Parameter vector on the log scale:
//   free nugget:  (log rho_1..d, log g) with Sigma = sigma2 (R + g I), sigma2 profiled
//   fixed nugget: (log rho_1..d, log sigma2)
struct MleObjective {
  const Eigen::MatrixXd& u;
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  const FitOptions& opt;
  double scale;  // variance scale of y

  static constexpr double kLogRhoMin = -9.2;  // 1e-4
  static constexpr double kLogRhoMax = 6.9;   // 1e3

  GPHyperParams unpack(const std::vector<double>& p, double sigma2) const {
    GPHyperParams h;
    h.rho.resize(u.cols());
    for (Eigen::Index j = 0; j < u.cols(); ++j) h.rho(j) = std::exp(p[static_cast<std::size_t>(j)]);
    if (opt.fixedTau2) {
      h.sigma2 = std::exp(p.back());
      h.tau2 = *opt.fixedTau2;
    } else {
      h.sigma2 = sigma2;
      h.tau2 = sigma2 * std::exp(p.back());
    }
    return h;
  }

  bool feasible(const std::vector<double>& p) const {
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      if (p[static_cast<std::size_t>(j)] < kLogRhoMin || p[static_cast<std::size_t>(j)] > kLogRhoMax) return false;
    if (opt.fixedTau2) return p.back() > std::log(scale) - 30.0 && p.back() < std::log(scale) + 10.0;
    return p.back() >= std::log(opt.nuggetFloor) && p.back() <= std::log(1e4);
  }

  /// Returns (nll, beta, hyper) with beta (and sigma2 when the nugget is free) profiled.
  std::optional<std::tuple<double, Eigen::VectorXd, GPHyperParams>> evaluate(const std::vector<double>& p) const {
    if (!feasible(p)) return std::nullopt;
    if (opt.fixedTau2) {
      GPHyperParams h = unpack(p, 0.0);
      const auto fit = gls(X, y, Eigen::LLT<Eigen::MatrixXd>(covariance_matrix(u, h)));
      if (!fit) return std::nullopt;
      return std::make_tuple(fit->nll, fit->beta, h);
    }
    GPHyperParams unit = unpack(p, 1.0);
    Eigen::LLT<Eigen::MatrixXd> llt(covariance_matrix(u, unit));
    if (llt.info() != Eigen::Success) return std::nullopt;
    const auto fit = gls(X, y, llt);
    if (!fit) return std::nullopt;
    const Eigen::VectorXd r = y - X * fit->beta;
    const double n = static_cast<double>(y.size());
    const double q = llt.matrixL().solve(r).squaredNorm();
    const double sigma2 = std::max(q / n, 1e-300);
    GPHyperParams h = unpack(p, sigma2);
    // Sigma = sigma2 * R_g, so log|Sigma| = n log sigma2 + log|R_g| and r' Sigma^-1 r = n.
    double logdetR = 0.0;
    for (Eigen::Index i = 0; i < llt.matrixLLT().rows(); ++i) logdetR += 2.0 * std::log(llt.matrixLLT()(i, i));
    const double nll = 0.5 * (n + n * std::log(sigma2) + logdetR + n * kLog2Pi);
    if (!std::isfinite(nll)) return std::nullopt;
    return std::make_tuple(nll, fit->beta, h);
  }

  double operator()(const std::vector<double>& p) const {
    const auto e = evaluate(p);
    return e ? std::get<0>(*e) : std::numeric_limits<double>::infinity();
  }
};

}  // namespace detail

/// Maximum-likelihood fit of one metric's emulator.
inline GPModel gp_fit_mle(const TrainingSet& ts, Metric metric, Transform tr, const FitOptions& opt = {},
                          FitDiagnostics* diag = nullptr) {
  ts.validate(metric);
  require(opt.restarts >= 1, "gp_fit_mle: at least one restart is required");
  const Eigen::MatrixXd u = ts.standardized_theta();
  const Eigen::MatrixXd X = ts.covariates();
  const Eigen::VectorXd y = ts.response(metric, tr);
  const double ymean = y.mean();
  double scale = (y.array() - ymean).square().sum() / std::max<double>(1.0, static_cast<double>(y.size() - 1));
  if (!(scale > 0.0)) scale = 1e-12 * (1.0 + ymean * ymean);

  detail::MleObjective obj{u, X, y, opt, scale};
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = ts.dim();

  double bestF = std::numeric_limits<double>::infinity();
  std::vector<double> bestX;
  for (int r = 0; r < opt.restarts; ++r) {
    std::vector<double> p0(static_cast<std::size_t>(d) + 1);
    for (int j = 0; j < d; ++j) p0[static_cast<std::size_t>(j)] = std::log(0.05) + unit(rng) * (std::log(2.0) - std::log(0.05));
    const double nuggetDraw = -6.0 + 5.0 * unit(rng);  // log10 of tau2 / sigma2
    const double sillDraw = -1.0 + 2.0 * unit(rng);
    p0.back() = opt.fixedTau2 ? std::log(scale) + sillDraw : nuggetDraw * std::numbers::ln10;
    const double f0 = obj(p0);
    const NelderMeadResult nm = nelder_mead(std::cref(obj), p0, opt.simplex);
    if (diag) {
      diag->startNll.push_back(f0);
      diag->finalNll.push_back(nm.f);
    }
    if (nm.f < bestF) {
      bestF = nm.f;
      bestX = nm.x;
    }
  }
  if (!std::isfinite(bestF))
    throw ConvergenceError("gp_fit_mle: every restart failed for " + to_string(metric) + " (" + to_string(tr) +
                           "); covariance never positive definite");
  auto [nll, beta, hyper] = *obj.evaluate(bestX);
  return GPModel(metric, tr, ts, beta, hyper, nll);
}

// ---------------------------------------------------------------------------
// Cross-validation and transform selection

struct CvCandidate {
  Transform transform = Transform::Identity;
  bool skipped = false;
  std::string notice;
  double rmse = 0.0;      // original scale
  double crps = 0.0;      // mean CRPS, original scale
  double coverage = 0.0;  // fraction of held-out values inside the 95% interval
  Eigen::VectorXd looMean, looLower, looUpper;  // original scale
};

struct CvReport {
  Metric metric = Metric::Amplitude;
  std::vector<CvCandidate> candidates;
  Transform selected = Transform::Identity;
  Eigen::VectorXd observed;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metric"] = to_string(metric);
    j["selected"] = to_string(selected);
    j["observed"] = std::vector<double>(observed.data(), observed.data() + observed.size());
    for (const auto& c : candidates) {
      nlohmann::json cj;
      cj["transform"] = to_string(c.transform);
      cj["skipped"] = c.skipped;
      if (c.skipped) {
        cj["notice"] = c.notice;
      } else {
        cj["rmse"] = c.rmse;
        cj["crps"] = c.crps;
        cj["coverage95"] = c.coverage;
        cj["loo_mean"] = std::vector<double>(c.looMean.data(), c.looMean.data() + c.looMean.size());
        cj["loo_lower"] = std::vector<double>(c.looLower.data(), c.looLower.data() + c.looLower.size());
        cj["loo_upper"] = std::vector<double>(c.looUpper.data(), c.looUpper.data() + c.looUpper.size());
      }
      j["candidates"].push_back(cj);
    }
    return j;
  }
};

/// Scores a fitted model by closed-form leave-one-out on the original scale.
inline CvCandidate loo_score(const GPModel& model, const Eigen::VectorXd& observed) {
  CvCandidate c;
  c.transform = model.transform();
  const auto [m, v] = model.loo_latent();
  const Eigen::Index n = observed.size();
  c.looMean.resize(n);
  c.looLower.resize(n);
  c.looUpper.resize(n);
  double se = 0.0, crps = 0.0;
  int inside = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = std::sqrt(std::max(v(i), 0.0));
    const double y = observed(i);
    if (model.transform() == Transform::Log) {
      c.looMean(i) = std::exp(m(i) + 0.5 * v(i));
      c.looLower(i) = std::exp(m(i) - stats::kZ975 * s);
      c.looUpper(i) = std::exp(m(i) + stats::kZ975 * s);
      crps += stats::crps_lognormal(m(i), s, y);
    } else {
      c.looMean(i) = m(i);
      c.looLower(i) = m(i) - stats::kZ975 * s;
      c.looUpper(i) = m(i) + stats::kZ975 * s;
      crps += stats::crps_normal(m(i), s, y);
    }
    se += (y - c.looMean(i)) * (y - c.looMean(i));
    if (y >= c.looLower(i) && y <= c.looUpper(i)) ++inside;
  }
  c.rmse = std::sqrt(se / static_cast<double>(n));
  c.crps = crps / static_cast<double>(n);
  c.coverage = static_cast<double>(inside) / static_cast<double>(n);
  return c;
}

/// Leave-one-out comparison of transform candidates. The winner has coverage
/// closest to 95%; coverages within one binomial standard error of each other
/// count as tied and are separated by RMSE.
inline CvReport loo_cv(const TrainingSet& ts, Metric metric, const std::vector<Transform>& candidates,
                       const FitOptions& opt = {}) {
  ts.validate(metric);
  require(!candidates.empty(), "loo_cv: no transform candidates");
  CvReport rep;
  rep.metric = metric;
  rep.observed = ts.metrics.at(metric);
  for (Transform tr : candidates) {
    if (tr == Transform::Log && (rep.observed.array() <= 0.0).any()) {
      CvCandidate c;
      c.transform = tr;
      c.skipped = true;
      c.notice = "log transform skipped: " + to_string(metric) + " has nonpositive values";
      rep.candidates.push_back(c);
      continue;
    }
    rep.candidates.push_back(loo_score(gp_fit_mle(ts, metric, tr, opt), rep.observed));
  }
  const double tieBand = std::sqrt(0.95 * 0.05 / ts.size());
  const CvCandidate* best = nullptr;
  for (const auto& c : rep.candidates) {
    if (c.skipped) continue;
    if (!best) {
      best = &c;
      continue;
    }
    const double gapBest = std::abs(best->coverage - 0.95), gapC = std::abs(c.coverage - 0.95);
    if (gapC < gapBest - tieBand || (std::abs(gapC - gapBest) <= tieBand && c.rmse < best->rmse)) best = &c;
  }
  if (!best) throw ValidationError("loo_cv: every transform candidate was skipped for " + to_string(metric));
  rep.selected = best->transform;
  return rep;
}

}  // namespace warpcal
