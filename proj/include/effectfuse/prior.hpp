// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"

namespace effectfuse {

enum class PsiMode { Fixed, Random };

inline const char* to_string(PsiMode mode) {
  return mode == PsiMode::Fixed ? "fixed" : "random";
}

// Least squares fit under a flat prior; supplies the pilot estimates that the
// mixture hyperparameters are built from and the chain initialization.
struct FlatFit {
  Eigen::VectorXd coef;
  double rss = 0.0;
  double residual_variance = 0.0;
};

inline FlatFit flat_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw DataError("response length does not match design rows");
  if (n <= p)
    throw DataError("flat fit needs more observations than columns (n = " +
                    std::to_string(n) + ", columns = " + std::to_string(p) + ")");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double tol = svd.singularValues()[0] * static_cast<double>(std::max(n, p)) *
                     std::numeric_limits<double>::epsilon();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > tol) ++rank;
  if (rank < p)
    throw DataError("design matrix is rank deficient (rank " + std::to_string(rank) +
                    " of " + std::to_string(p) + " columns)");
  FlatFit fit;
  fit.coef = svd.solve(y);
  fit.rss = (y - X * fit.coef).squaredNorm();
  fit.residual_variance = fit.rss / static_cast<double>(n - p);
  return fit;
}

// Data-driven hyperparameters for one categorical covariate, computed from
// the flat-fit effects beta_hat_j:
//   m0  = mean(beta_hat_j)
//   M0  = (max - min)^2
//   V   = sample variance (divisor c-1)
//   psi = V / nu
// A single effect (binary covariate) has no spread, so V falls back to the
// squared effect. Zero spread is floored at 1e-8 * (1 + m0^2) to keep the
// scales strictly positive.
struct EmpiricalHyperparams {
  double m0 = 0.0;
  double M0 = 0.0;
  double V = 0.0;
  double psi = 0.0;
  bool binary_fallback = false;
  bool degenerate_spread = false;
};

inline EmpiricalHyperparams empirical_hyperparams(const Eigen::VectorXd& beta_hat,
                                                  double nu) {
  if (beta_hat.size() == 0)
    throw DataError("cannot build hyperparameters from an empty effect block");
  if (!(nu > 0.0)) throw ConfigError("nu must be positive");
  EmpiricalHyperparams h;
  const Eigen::Index c = beta_hat.size();
  h.m0 = beta_hat.mean();
  if (c == 1) {
    h.binary_fallback = true;
    h.V = beta_hat[0] * beta_hat[0];
    h.M0 = 0.0;
  } else {
    h.V = (beta_hat.array() - h.m0).square().sum() / static_cast<double>(c - 1);
    const double range = beta_hat.maxCoeff() - beta_hat.minCoeff();
    h.M0 = range * range;
  }
  const double floor = 1e-8 * (1.0 + h.m0 * h.m0);
  if (h.V < floor || h.M0 < floor) h.degenerate_spread = true;
  h.V = std::max(h.V, floor);
  h.M0 = std::max(h.M0, floor);
  h.psi = h.V / nu;
  return h;
}

// Scale of the inverse gamma hyperprior psi ~ IG(g0, G0) chosen so that
// E(psi) = G0 / (g0 - 1) matches the fixed-mode value V / nu. g0 > 2 keeps
// the prior variance V(psi) = E(psi)^2 / (g0 - 2) finite.
inline double random_psi_scale(double V, double nu, double g0) {
  if (!(V > 0.0)) throw ConfigError("V must be positive");
  if (!(nu > 0.0)) throw ConfigError("nu must be positive");
  if (!(g0 > 2.0)) throw ConfigError("g0 must exceed 2 for a finite prior variance");
  return (V / nu) * (g0 - 1.0);
}

// Mixture prior for one categorical covariate: component 0 is the spike at
// zero, components 1..L carry free means mu_l ~ N(m0, M0); all components
// share the variance psi.
struct MixturePriorSpec {
  std::string covariate;
  int effect_count = 0;     // c_j
  int component_count = 0;  // L_j non-zero components; L_j + 1 in total
  double e0 = 0.01;
  double m0 = 0.0;
  double M0 = 1.0;
  PsiMode psi_mode = PsiMode::Fixed;
  double psi = 1.0;  // fixed value; prior mean when psi_mode == Random
  double g0 = 100.0;
  double G0 = 0.0;
  double V = 0.0;
  bool binary_fallback = false;
  bool degenerate_spread = false;
};

// Priors for the whole regression. The intercept gets N(0, intercept_variance),
// continuous effects N(0, flat_variance), sigma^2 ~ IG(s0, S0) with the
// improper limit s0 = S0 = 0 as default.
struct GlobalPriorSpec {
  double intercept_variance = 1e4;
  double flat_variance = 1e4;
  double s0 = 0.0;
  double S0 = 0.0;
  std::vector<MixturePriorSpec> mixture;
};

struct PriorOptions {
  double nu = 1e3;
  double e0 = 0.01;
  PsiMode psi_mode = PsiMode::Fixed;
  double g0 = 100.0;
  bool global_psi = false;  // pool one V across all categorical covariates
  double intercept_variance = 1e4;
  double flat_variance = 1e4;
};

inline void validate(const PriorOptions& opt) {
  if (!(opt.nu > 0.0)) throw ConfigError("nu must be positive");
  if (!(opt.e0 > 0.0 && opt.e0 < 1.0))
    throw ConfigError("e0 must lie in (0, 1); small values empty spare components");
  if (opt.psi_mode == PsiMode::Random && !(opt.g0 > 2.0))
    throw ConfigError("g0 must exceed 2 for a finite prior variance");
  if (!(opt.intercept_variance > 0.0)) throw ConfigError("intercept variance must be positive");
  if (!(opt.flat_variance > 0.0)) throw ConfigError("flat variance must be positive");
}

// Assembles the full prior from the flat fit. Every categorical covariate
// gets L_j = c_j components so the mixture overfits and lets the Dirichlet
// concentration e0 empty what the data does not need.
inline GlobalPriorSpec make_prior(const DesignMatrix& design, const FlatFit& fit,
                                  const Dataset& data, const PriorOptions& opt) {
  validate(opt);
  if (fit.coef.size() != design.layout.columns())
    throw DataError("flat fit does not match the design layout");

  double pooled_V = 0.0;
  if (opt.global_psi) {
    std::vector<double> pooled;
    for (const auto& [first, count] : design.layout.categorical_span)
      for (int k = 0; k < count; ++k) pooled.push_back(fit.coef[first + k]);
    Eigen::Map<Eigen::VectorXd> all(pooled.data(), pooled.size());
    pooled_V = empirical_hyperparams(all, opt.nu).V;
  }

  GlobalPriorSpec prior;
  prior.intercept_variance = opt.intercept_variance;
  prior.flat_variance = opt.flat_variance;
  for (std::size_t j = 0; j < design.layout.categorical_span.size(); ++j) {
    const auto [first, count] = design.layout.categorical_span[j];
    EmpiricalHyperparams h =
        empirical_hyperparams(fit.coef.segment(first, count), opt.nu);
    MixturePriorSpec spec;
    spec.covariate = data.categorical[j].name;
    spec.effect_count = count;
    spec.component_count = count;
    spec.e0 = opt.e0;
    spec.m0 = h.m0;
    spec.M0 = h.M0;
    spec.V = opt.global_psi ? pooled_V : h.V;
    spec.psi = spec.V / opt.nu;
    spec.psi_mode = opt.psi_mode;
    spec.binary_fallback = h.binary_fallback;
    spec.degenerate_spread = h.degenerate_spread;
    if (opt.psi_mode == PsiMode::Random) {
      spec.g0 = opt.g0;
      spec.G0 = random_psi_scale(spec.V, opt.nu, opt.g0);
    }
    prior.mixture.push_back(std::move(spec));
  }
  return prior;
}

}  // namespace effectfuse
