// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"
#include "effectfuse/prior.hpp"
#include "effectfuse/rng.hpp"

namespace effectfuse {

// Mixture state for one categorical covariate. Component 0 is the spike at
// zero: mu[0] stays 0 forever, and effects allocated to it are shrunk to the
// baseline. alloc[k] in 0..L is the component of effect k (0-based level k+1).
struct CovariateState {
  Eigen::VectorXd eta;       // L+1 weights, each > 0
  Eigen::VectorXd log_eta;   // kept alongside eta; weights can underflow
  Eigen::VectorXd mu;        // L+1 means, mu[0] == 0
  double psi = 1.0;
  std::vector<int> alloc;    // c entries
  std::vector<int> counts;       // occupancy per component, sums to c
  Eigen::VectorXd member_mean;   // average effect per component, 0 where empty
};

struct McmcState {
  Eigen::VectorXd coef;
  double sigma2 = 1.0;
  std::vector<CovariateState> mix;
};

struct SamplerConfig {
  int iterations = 1000;  // retained draws
  int burn_in = 1000;
  int thin = 1;
  std::uint64_t seed = 1;
  bool record_allocations = true;
  bool record_mixture_params = false;
};

inline void validate(const SamplerConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (cfg.burn_in < 0) throw ConfigError("burn-in cannot be negative");
  if (cfg.thin < 1) throw ConfigError("thinning interval must be at least 1");
}

struct McmcTrace {
  Eigen::MatrixXd beta;              // draws x columns
  Eigen::VectorXd sigma2;            // draws
  std::vector<AllocMatrix> alloc;    // per covariate: draws x c_j
  std::vector<Eigen::MatrixXd> eta;  // optional, per covariate: draws x (L+1)
  std::vector<Eigen::MatrixXd> mu;   // optional, same shape as eta
  std::vector<Eigen::VectorXd> psi;  // optional, per covariate
  bool has_mixture_params = false;
  int burn_in = 0;
  int thin = 1;
  std::uint64_t seed = 0;

  Eigen::Index draws() const { return sigma2.size(); }
};

// Gibbs sampler for the linear model y = X beta + eps with the sparse mixture
// prior on categorical effect blocks. Blocks are given as (first column,
// count) spans into X, one per entry of prior.mixture; every other column is
// a flat normal effect (intercept at column 0, continuous covariates).
//
// Sweep order: coefficients, error variance, weights, component means,
// component variance (random mode), allocations.
class GibbsSampler {
 public:
  GibbsSampler(Eigen::MatrixXd X, Eigen::VectorXd y, GlobalPriorSpec prior,
               std::vector<std::pair<int, int>> mixture_spans)
      : X_(std::move(X)),
        y_(std::move(y)),
        prior_(std::move(prior)),
        spans_(std::move(mixture_spans)) {
    const Eigen::Index n = X_.rows(), p = X_.cols();
    if (y_.size() != n) throw DataError("response length does not match design rows");
    if (n < 1 || p < 1) throw DataError("empty design matrix");
    if (spans_.size() != prior_.mixture.size())
      throw ConfigError("one mixture span per mixture prior is required");
    col_cov_.assign(p, -1);
    col_effect_.assign(p, -1);
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto [first, count] = spans_[j];
      const auto& spec = prior_.mixture[j];
      if (first < 1 || count < 1 || first + count > p)
        throw ConfigError("mixture span out of range");
      if (spec.effect_count != count)
        throw ConfigError("mixture prior effect count does not match its span");
      if (spec.component_count < 1)
        throw ConfigError("a mixture needs at least one non-zero component");
      if (spec.component_count > 65535)
        throw ConfigError("component count exceeds allocation storage");
      if (!(spec.e0 > 0.0)) throw ConfigError("e0 must be positive");
      if (!(spec.M0 > 0.0)) throw ConfigError("M0 must be positive");
      if (spec.psi_mode == PsiMode::Fixed && !(spec.psi > 0.0))
        throw ConfigError("fixed psi must be positive");
      if (spec.psi_mode == PsiMode::Random && !(spec.G0 > 0.0 && spec.g0 > 2.0))
        throw ConfigError("random psi needs G0 > 0 and g0 > 2");
      for (int k = 0; k < count; ++k) {
        if (col_cov_[first + k] != -1) throw ConfigError("mixture spans overlap");
        col_cov_[first + k] = static_cast<int>(j);
        col_effect_[first + k] = k;
      }
    }
    if (!(prior_.intercept_variance > 0.0) || !(prior_.flat_variance > 0.0))
      throw ConfigError("flat prior variances must be positive");
    XtX_.noalias() = X_.transpose() * X_;
    Xty_.noalias() = X_.transpose() * y_;
    yty_ = y_.squaredNorm();
  }

  GibbsSampler(const DesignMatrix& design, const Eigen::VectorXd& y,
               GlobalPriorSpec prior)
      : GibbsSampler(design.matrix, y, std::move(prior),
                     design.layout.categorical_span) {}

  Eigen::Index rows() const { return X_.rows(); }
  Eigen::Index columns() const { return X_.cols(); }
  const Eigen::MatrixXd& design() const { return X_; }
  const Eigen::VectorXd& response() const { return y_; }
  const GlobalPriorSpec& prior() const { return prior_; }
  const std::vector<std::pair<int, int>>& spans() const { return spans_; }

  // Swap in a new response vector (same length); used when the sampler runs
  // against freshly simulated data between sweeps.
  void set_response(const Eigen::VectorXd& y) {
    if (y.size() != X_.rows()) throw DataError("response length does not match design rows");
    y_ = y;
    Xty_.noalias() = X_.transpose() * y_;
    yty_ = y_.squaredNorm();
  }

  // Deterministic start: coefficients at the flat fit, each effect in its own
  // component (component 0 left empty), component means at the pilot effects,
  // uniform weights, psi at its prior value.
  McmcState init_state(const Eigen::VectorXd& coef, double sigma2) const {
    if (coef.size() != X_.cols()) throw DataError("initial coefficients have wrong length");
    if (!(sigma2 > 0.0)) throw DataError("initial sigma^2 must be positive");
    McmcState state;
    state.coef = coef;
    state.sigma2 = sigma2;
    state.mix.resize(spans_.size());
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto [first, count] = spans_[j];
      const auto& spec = prior_.mixture[j];
      const int L = spec.component_count;
      CovariateState& cs = state.mix[j];
      cs.eta = Eigen::VectorXd::Constant(L + 1, 1.0 / (L + 1));
      cs.log_eta = Eigen::VectorXd::Constant(L + 1, -std::log(L + 1.0));
      cs.mu = Eigen::VectorXd::Zero(L + 1);
      cs.psi = spec.psi_mode == PsiMode::Fixed ? spec.psi : spec.G0 / (spec.g0 - 1.0);
      cs.alloc.resize(count);
      for (int k = 0; k < count; ++k) cs.alloc[k] = k % L + 1;
      for (int l = 1; l <= L; ++l) {
        cs.mu[l] = spec.m0;
        for (int k = 0; k < count; ++k)
          if (cs.alloc[k] == l) {
            cs.mu[l] = coef[first + k];
            break;
          }
      }
    }
    refresh_derived(state);
    return state;
  }

  McmcState init_state(const FlatFit& fit) const {
    return init_state(fit.coef, std::max(fit.residual_variance, 1e-12));
  }

  void refresh_derived(McmcState& state) const {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto [first, count] = spans_[j];
      CovariateState& cs = state.mix[j];
      const int m = static_cast<int>(cs.eta.size());
      cs.counts.assign(m, 0);
      cs.member_mean = Eigen::VectorXd::Zero(m);
      for (int k = 0; k < count; ++k) {
        cs.counts[cs.alloc[k]] += 1;
        cs.member_mean[cs.alloc[k]] += state.coef[first + k];
      }
      for (int l = 0; l < m; ++l)
        if (cs.counts[l] > 0) cs.member_mean[l] /= cs.counts[l];
    }
  }

  // Conditional prior on the coefficient vector implied by the current
  // allocations: mean mu_{j,S_jk} and variance psi_j on mixture columns, the
  // flat normal everywhere else.
  void conditional_prior(const McmcState& state, Eigen::VectorXd& mean,
                         Eigen::VectorXd& var) const {
    const Eigen::Index p = X_.cols();
    mean.resize(p);
    var.resize(p);
    mean[0] = 0.0;
    var[0] = prior_.intercept_variance;
    for (Eigen::Index c = 1; c < p; ++c) {
      const int j = col_cov_[c];
      if (j < 0) {
        mean[c] = 0.0;
        var[c] = prior_.flat_variance;
      } else {
        const CovariateState& cs = state.mix[j];
        mean[c] = cs.mu[cs.alloc[col_effect_[c]]];
        var[c] = cs.psi;
      }
    }
  }

  struct BetaPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
  };

  BetaPosterior beta_posterior(const McmcState& state) const {
    Eigen::VectorXd prior_mean, prior_var;
    conditional_prior(state, prior_mean, prior_var);
    Eigen::MatrixXd P = XtX_ / state.sigma2;
    P.diagonal() += prior_var.cwiseInverse();
    Eigen::VectorXd rhs = Xty_ / state.sigma2 + prior_mean.cwiseQuotient(prior_var);
    Eigen::LLT<Eigen::MatrixXd> llt = factor_precision(P);
    BetaPosterior post;
    post.covariance = llt.solve(Eigen::MatrixXd::Identity(P.rows(), P.cols()));
    post.mean = llt.solve(rhs);
    return post;
  }

  void step_beta(McmcState& state, Rng& rng) {
    Eigen::VectorXd prior_mean, prior_var;
    conditional_prior(state, prior_mean, prior_var);
    Eigen::MatrixXd P = XtX_ / state.sigma2;
    P.diagonal() += prior_var.cwiseInverse();
    Eigen::VectorXd rhs = Xty_ / state.sigma2 + prior_mean.cwiseQuotient(prior_var);
    Eigen::LLT<Eigen::MatrixXd> llt = factor_precision(P);
    Eigen::VectorXd z(P.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal(0.0, 1.0);
    // P = L L^T, so L^{-T} z has covariance P^{-1}
    state.coef = llt.solve(rhs) + llt.matrixU().solve(z);
    refresh_means(state);
  }

  double residual_sum_of_squares(const McmcState& state) const {
    double rss = yty_ - 2.0 * state.coef.dot(Xty_) + state.coef.dot(XtX_ * state.coef);
    return std::max(rss, 0.0);
  }

  // shape s_N and scale S_N of sigma^2 | beta, y
  std::pair<double, double> sigma2_posterior(const McmcState& state) const {
    return {prior_.s0 + 0.5 * static_cast<double>(X_.rows()),
            prior_.S0 + 0.5 * residual_sum_of_squares(state)};
  }

  void step_sigma2(McmcState& state, Rng& rng) {
    const auto [shape, scale] = sigma2_posterior(state);
    if (!(scale > 0.0))
      throw NumericalError(
          "sigma^2 posterior scale is zero: residuals vanished under an improper prior");
    state.sigma2 = rng.inv_gamma(shape, scale);
  }

  Eigen::VectorXd eta_concentration(const McmcState& state, int j) const {
    const CovariateState& cs = state.mix[j];
    Eigen::VectorXd conc(cs.eta.size());
    for (Eigen::Index l = 0; l < conc.size(); ++l)
      conc[l] = prior_.mixture[j].e0 + cs.counts[l];
    return conc;
  }

  void step_eta(McmcState& state, Rng& rng) {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      CovariateState& cs = state.mix[j];
      Eigen::VectorXd conc = eta_concentration(state, static_cast<int>(j));
      rng.dirichlet_log({conc.data(), static_cast<std::size_t>(conc.size())},
                        {cs.log_eta.data(), static_cast<std::size_t>(cs.log_eta.size())});
      for (Eigen::Index l = 0; l < cs.eta.size(); ++l)
        cs.eta[l] = std::max(std::exp(cs.log_eta[l]), DBL_MIN);
    }
  }

  // mean and variance of mu_jl | rest; empty components fall back to the
  // N(m0, M0) hyperprior
  std::pair<double, double> mu_posterior(const McmcState& state, int j, int l) const {
    const auto& spec = prior_.mixture[j];
    const CovariateState& cs = state.mix[j];
    if (l < 1 || l >= static_cast<int>(cs.mu.size()))
      throw ConfigError("component index out of range");
    if (cs.counts[l] == 0) return {spec.m0, spec.M0};
    const double var = 1.0 / (cs.counts[l] / cs.psi + 1.0 / spec.M0);
    const double mean =
        var * (cs.counts[l] * cs.member_mean[l] / cs.psi + spec.m0 / spec.M0);
    return {mean, var};
  }

  void step_mu(McmcState& state, Rng& rng) {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      CovariateState& cs = state.mix[j];
      for (int l = 1; l < static_cast<int>(cs.mu.size()); ++l) {
        const auto [mean, var] = mu_posterior(state, static_cast<int>(j), l);
        cs.mu[l] = rng.normal(mean, std::sqrt(var));
      }
    }
  }

  // shape and scale of psi_j | rest in random mode
  std::pair<double, double> psi_posterior(const McmcState& state, int j) const {
    const auto& spec = prior_.mixture[j];
    const auto [first, count] = spans_[j];
    const CovariateState& cs = state.mix[j];
    double dev = 0.0;
    for (int k = 0; k < count; ++k) {
      const double d = state.coef[first + k] - cs.mu[cs.alloc[k]];
      dev += d * d;
    }
    return {spec.g0 + 0.5 * count, spec.G0 + 0.5 * dev};
  }

  void step_psi(McmcState& state, Rng& rng) {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      if (prior_.mixture[j].psi_mode != PsiMode::Random) continue;
      const auto [shape, scale] = psi_posterior(state, static_cast<int>(j));
      state.mix[j].psi = rng.inv_gamma(shape, scale);
    }
  }

  // Posterior allocation probabilities for effect k of covariate j,
  // normalized; computed in log space so weights near the underflow edge
  // still produce a valid simplex.
  Eigen::VectorXd allocation_probabilities(const McmcState& state, int j, int k) const {
    Eigen::VectorXd log_p = allocation_log_probs(state, j, k);
    const double max_lp = log_p.maxCoeff();
    if (!(max_lp > -HUGE_VAL))
      throw NumericalError("allocation probabilities degenerate for covariate " +
                           prior_.mixture[j].covariate);
    Eigen::VectorXd p = (log_p.array() - max_lp).exp();
    return p / p.sum();
  }

  void step_allocations(McmcState& state, Rng& rng) {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto [first, count] = spans_[j];
      CovariateState& cs = state.mix[j];
      for (int k = 0; k < count; ++k) {
        Eigen::VectorXd log_p = allocation_log_probs(state, static_cast<int>(j), k);
        cs.alloc[k] = rng.categorical_from_log(
            {log_p.data(), static_cast<std::size_t>(log_p.size())});
      }
    }
    refresh_derived(state);
  }

  void sweep(McmcState& state, Rng& rng) {
    step_beta(state, rng);
    step_sigma2(state, rng);
    step_eta(state, rng);
    step_mu(state, rng);
    step_psi(state, rng);
    step_allocations(state, rng);
  }

  McmcTrace run(McmcState state, const SamplerConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    McmcTrace trace;
    trace.burn_in = cfg.burn_in;
    trace.thin = cfg.thin;
    trace.seed = cfg.seed;
    trace.beta.resize(cfg.iterations, X_.cols());
    trace.sigma2.resize(cfg.iterations);
    if (cfg.record_allocations)
      for (const auto& [first, count] : spans_)
        trace.alloc.emplace_back(cfg.iterations, count);
    if (cfg.record_mixture_params) {
      trace.has_mixture_params = true;
      for (std::size_t j = 0; j < spans_.size(); ++j) {
        const int m = prior_.mixture[j].component_count + 1;
        trace.eta.emplace_back(cfg.iterations, m);
        trace.mu.emplace_back(cfg.iterations, m);
        trace.psi.emplace_back(cfg.iterations);
      }
    }
    const long total = static_cast<long>(cfg.burn_in) +
                       static_cast<long>(cfg.iterations) * cfg.thin;
    long row = 0;
    for (long s = 0; s < total; ++s) {
      sweep(state, rng);
      if (s < cfg.burn_in || (s - cfg.burn_in) % cfg.thin != 0) continue;
      trace.beta.row(row) = state.coef;
      trace.sigma2[row] = state.sigma2;
      for (std::size_t j = 0; j < spans_.size(); ++j) {
        if (cfg.record_allocations)
          for (int k = 0; k < spans_[j].second; ++k)
            trace.alloc[j](row, k) = static_cast<std::uint16_t>(state.mix[j].alloc[k]);
        if (cfg.record_mixture_params) {
          trace.eta[j].row(row) = state.mix[j].eta;
          trace.mu[j].row(row) = state.mix[j].mu;
          trace.psi[j][row] = state.mix[j].psi;
        }
      }
      ++row;
    }
    return trace;
  }

  // Joint draw of all parameters from the prior; requires a proper error
  // variance prior. Used by simulation-based correctness checks.
  McmcState draw_from_prior(Rng& rng) const {
    if (!(prior_.s0 > 0.0 && prior_.S0 > 0.0))
      throw ConfigError("prior draws need a proper sigma^2 prior (s0, S0 > 0)");
    McmcState state;
    state.sigma2 = rng.inv_gamma(prior_.s0, prior_.S0);
    state.mix.resize(spans_.size());
    state.coef.resize(X_.cols());
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto& spec = prior_.mixture[j];
      const int L = spec.component_count;
      CovariateState& cs = state.mix[j];
      Eigen::VectorXd conc = Eigen::VectorXd::Constant(L + 1, spec.e0);
      cs.log_eta.resize(L + 1);
      rng.dirichlet_log({conc.data(), static_cast<std::size_t>(conc.size())},
                        {cs.log_eta.data(), static_cast<std::size_t>(cs.log_eta.size())});
      cs.eta = cs.log_eta.array().exp().max(DBL_MIN);
      cs.mu.resize(L + 1);
      cs.mu[0] = 0.0;
      for (int l = 1; l <= L; ++l) cs.mu[l] = rng.normal(spec.m0, std::sqrt(spec.M0));
      cs.psi = spec.psi_mode == PsiMode::Fixed ? spec.psi
                                               : rng.inv_gamma(spec.g0, spec.G0);
      cs.alloc.resize(spans_[j].second);
      for (int k = 0; k < spans_[j].second; ++k)
        cs.alloc[k] = rng.categorical_from_log(
            {cs.log_eta.data(), static_cast<std::size_t>(cs.log_eta.size())});
    }
    state.coef[0] = rng.normal(0.0, std::sqrt(prior_.intercept_variance));
    for (Eigen::Index c = 1; c < X_.cols(); ++c) {
      const int j = col_cov_[c];
      if (j < 0) {
        state.coef[c] = rng.normal(0.0, std::sqrt(prior_.flat_variance));
      } else {
        const CovariateState& cs = state.mix[j];
        state.coef[c] =
            rng.normal(cs.mu[cs.alloc[col_effect_[c]]], std::sqrt(cs.psi));
      }
    }
    refresh_derived(state);
    return state;
  }

  Eigen::VectorXd draw_response(const McmcState& state, Rng& rng) const {
    Eigen::VectorXd y = X_ * state.coef;
    const double sd = std::sqrt(state.sigma2);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += rng.normal(0.0, sd);
    return y;
  }

 private:
  Eigen::VectorXd allocation_log_probs(const McmcState& state, int j, int k) const {
    const auto [first, count] = spans_[j];
    const CovariateState& cs = state.mix[j];
    const double beta = state.coef[first + k];
    const double log_norm = -0.5 * std::log(2.0 * M_PI * cs.psi);
    Eigen::VectorXd log_p(cs.mu.size());
    for (Eigen::Index l = 0; l < cs.mu.size(); ++l) {
      const double d = beta - cs.mu[l];
      log_p[l] = cs.log_eta[l] + log_norm - 0.5 * d * d / cs.psi;
    }
    return log_p;
  }

  // Component means have to track the freshly drawn coefficients; occupancy
  // only changes in the allocation step.
  void refresh_means(McmcState& state) const {
    for (std::size_t j = 0; j < spans_.size(); ++j) {
      const auto [first, count] = spans_[j];
      CovariateState& cs = state.mix[j];
      cs.member_mean.setZero();
      for (int k = 0; k < count; ++k)
        cs.member_mean[cs.alloc[k]] += state.coef[first + k];
      for (int l = 0; l < static_cast<int>(cs.counts.size()); ++l)
        if (cs.counts[l] > 0) cs.member_mean[l] /= cs.counts[l];
    }
  }

  Eigen::LLT<Eigen::MatrixXd> factor_precision(Eigen::MatrixXd& P) const {
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() == Eigen::Success) return llt;
    P.diagonal().array() += 1e-10 * P.trace() / static_cast<double>(P.rows());
    llt.compute(P);
    if (llt.info() == Eigen::Success) return llt;
    throw NumericalError("coefficient precision matrix is not positive definite");
  }

  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  GlobalPriorSpec prior_;
  std::vector<std::pair<int, int>> spans_;
  std::vector<int> col_cov_;     // column -> mixture covariate, -1 for flat columns
  std::vector<int> col_effect_;  // column -> effect index within its block
  Eigen::MatrixXd XtX_;
  Eigen::VectorXd Xty_;
  double yty_ = 0.0;
};

// Pilot fit, data-driven prior, sampler run. The standard entry point for
// fitting the fusion model to one dataset.
struct FusionFit {
  FlatFit pilot;
  GlobalPriorSpec prior;
  McmcTrace trace;
};

inline FusionFit fuse(const DesignMatrix& design, const Eigen::VectorXd& y,
                      const Dataset& data, const PriorOptions& prior_opt,
                      const SamplerConfig& cfg) {
  FusionFit out;
  out.pilot = flat_fit(design.matrix, y);
  out.prior = make_prior(design, out.pilot, data, prior_opt);
  GibbsSampler sampler(design, y, out.prior);
  out.trace = sampler.run(sampler.init_state(out.pilot), cfg);
  return out;
}

}  // namespace effectfuse
