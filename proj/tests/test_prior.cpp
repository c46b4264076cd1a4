// Apache License, Version 2.0, refer to LICENSE.txt

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "effectfuse/prior.hpp"

using namespace effectfuse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("flat fit solves a system with a known exact answer") {
  // y = 1 + 2 x with no noise: the fit must recover it to machine precision.
  Eigen::MatrixXd X(4, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(4);
  y << 1, 3, 5, 7;
  const FlatFit fit = flat_fit(X, y);
  REQUIRE_THAT(fit.coef[0], WithinAbs(1.0, 1e-10));
  REQUIRE_THAT(fit.coef[1], WithinAbs(2.0, 1e-10));
  REQUIRE_THAT(fit.rss, WithinAbs(0.0, 1e-18));
}

TEST_CASE("flat fit residual variance uses n - p") {
  // Single-column design of ones: coef = mean(y), rss = sum (y - mean)^2.
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
  Eigen::VectorXd y(5);
  y << 1, 2, 3, 4, 10;
  const FlatFit fit = flat_fit(X, y);
  REQUIRE_THAT(fit.coef[0], WithinAbs(4.0, 1e-12));
  REQUIRE_THAT(fit.rss, WithinAbs(50.0, 1e-10));  // 9 + 4 + 1 + 0 + 36
  REQUIRE_THAT(fit.residual_variance, WithinAbs(12.5, 1e-10));
}

TEST_CASE("flat fit rejects under-determined and collinear designs") {
  Eigen::MatrixXd X(2, 3);
  X.setRandom();
  REQUIRE_THROWS_AS(flat_fit(X, Eigen::VectorXd::Zero(2)), DataError);

  Eigen::MatrixXd C(6, 3);
  C.col(0).setOnes();
  C.col(1) << 1, 2, 3, 4, 5, 6;
  C.col(2) = 2.0 * C.col(1);  // exact collinearity
  REQUIRE_THROWS_AS(flat_fit(C, Eigen::VectorXd::Zero(6)), DataError);

  Eigen::VectorXd short_y(5);
  Eigen::MatrixXd ok = Eigen::MatrixXd::Identity(6, 2);
  REQUIRE_THROWS_AS(flat_fit(ok, short_y), DataError);
}

TEST_CASE("hyperparameters from pilot effects, worked example one") {
  // beta_hat = (0, 1, 2), nu = 100:
  //   m0 = 1, M0 = (2 - 0)^2 = 4,
  //   V  = ((0-1)^2 + 0 + (2-1)^2) / 2 = 1, psi = 1/100.
  Eigen::VectorXd beta(3);
  beta << 0, 1, 2;
  const EmpiricalHyperparams h = empirical_hyperparams(beta, 100.0);
  REQUIRE_THAT(h.m0, WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(h.M0, WithinAbs(4.0, 1e-15));
  REQUIRE_THAT(h.V, WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(h.psi, WithinAbs(0.01, 1e-15));
  REQUIRE(!h.binary_fallback);
  REQUIRE(!h.degenerate_spread);
}

TEST_CASE("hyperparameters from pilot effects, worked example two") {
  // beta_hat = (-1, 1), nu = 10: m0 = 0, M0 = 4, V = 2, psi = 0.2.
  Eigen::VectorXd beta(2);
  beta << -1, 1;
  const EmpiricalHyperparams h = empirical_hyperparams(beta, 10.0);
  REQUIRE_THAT(h.m0, WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(h.M0, WithinAbs(4.0, 1e-15));
  REQUIRE_THAT(h.V, WithinAbs(2.0, 1e-15));
  REQUIRE_THAT(h.psi, WithinAbs(0.2, 1e-15));
}

TEST_CASE("binary covariate falls back to the squared effect") {
  Eigen::VectorXd beta(1);
  beta << 0.5;
  const EmpiricalHyperparams h = empirical_hyperparams(beta, 100.0);
  REQUIRE(h.binary_fallback);
  REQUIRE_THAT(h.V, WithinAbs(0.25, 1e-15));
  REQUIRE_THAT(h.psi, WithinAbs(0.0025, 1e-15));
  // M0 has no range to work with; the floor keeps it positive
  REQUIRE(h.M0 > 0.0);
  REQUIRE(h.degenerate_spread);
}

TEST_CASE("identical pilot effects hit the positivity floor") {
  Eigen::VectorXd beta(3);
  beta << 2.0, 2.0, 2.0;
  const EmpiricalHyperparams h = empirical_hyperparams(beta, 100.0);
  REQUIRE(h.degenerate_spread);
  const double floor = 1e-8 * (1.0 + 4.0);
  REQUIRE_THAT(h.V, WithinRel(floor, 1e-12));
  REQUIRE_THAT(h.M0, WithinRel(floor, 1e-12));
  REQUIRE(h.psi > 0.0);
}

TEST_CASE("random psi scale matches the fixed-mode mean") {
  // E(psi) = G0 / (g0 - 1) must equal V / nu.
  REQUIRE_THAT(random_psi_scale(1.0, 100.0, 100.0), WithinRel(0.99, 1e-14));
  REQUIRE_THAT(random_psi_scale(2.0, 10.0, 100.0), WithinRel(19.8, 1e-14));
  const double G0 = random_psi_scale(3.7, 250.0, 100.0);
  REQUIRE_THAT(G0 / (100.0 - 1.0), WithinRel(3.7 / 250.0, 1e-14));
  REQUIRE_THROWS_AS(random_psi_scale(1.0, 100.0, 2.0), ConfigError);
}

TEST_CASE("prior options validation") {
  PriorOptions opt;
  REQUIRE_NOTHROW(validate(opt));
  opt.e0 = 1.0;
  REQUIRE_THROWS_AS(validate(opt), ConfigError);
  opt.e0 = 0.01;
  opt.nu = 0.0;
  REQUIRE_THROWS_AS(validate(opt), ConfigError);
  opt.nu = 1e3;
  opt.psi_mode = PsiMode::Random;
  opt.g0 = 1.5;
  REQUIRE_THROWS_AS(validate(opt), ConfigError);
}

namespace {

Dataset two_covariate_data() {
  // color effects (1, 2), size effect 3, plus noise-free response so the
  // pilot effects are exact.
  Dataset data;
  data.categorical.push_back({"color", {"r", "g", "b"}, {0, 1, 2, 0, 1, 2, 0, 1, 2}});
  data.categorical.push_back({"size", {"s", "l"}, {0, 1, 0, 1, 0, 1, 0, 1, 0}});
  data.response.resize(9);
  const double color_fx[3] = {0.0, 1.0, 2.0};
  const double size_fx[2] = {0.0, 3.0};
  for (int i = 0; i < 9; ++i)
    data.response[i] = 0.5 + color_fx[data.categorical[0].codes[i]] +
                       size_fx[data.categorical[1].codes[i]];
  return data;
}

}  // namespace

TEST_CASE("assembled prior carries per-covariate empirical values") {
  const Dataset data = two_covariate_data();
  const DesignMatrix design = build_design(data);
  const FlatFit fit = flat_fit(design.matrix, data.response);
  PriorOptions opt;
  opt.nu = 100.0;
  const GlobalPriorSpec prior = make_prior(design, fit, data, opt);

  REQUIRE(prior.mixture.size() == 2);
  const MixturePriorSpec& color = prior.mixture[0];
  REQUIRE(color.covariate == "color");
  REQUIRE(color.effect_count == 2);
  REQUIRE(color.component_count == 2);  // L_j = c_j
  REQUIRE_THAT(color.m0, WithinAbs(1.5, 1e-8));
  REQUIRE_THAT(color.M0, WithinAbs(1.0, 1e-8));
  REQUIRE_THAT(color.V, WithinAbs(0.5, 1e-8));
  REQUIRE_THAT(color.psi, WithinAbs(0.005, 1e-10));

  const MixturePriorSpec& size = prior.mixture[1];
  REQUIRE(size.binary_fallback);
  REQUIRE_THAT(size.V, WithinAbs(9.0, 1e-8));

  // improper sigma^2 prior by default
  REQUIRE(prior.s0 == 0.0);
  REQUIRE(prior.S0 == 0.0);
}

TEST_CASE("random mode fills in the inverse gamma scale") {
  const Dataset data = two_covariate_data();
  const DesignMatrix design = build_design(data);
  const FlatFit fit = flat_fit(design.matrix, data.response);
  PriorOptions opt;
  opt.nu = 100.0;
  opt.psi_mode = PsiMode::Random;
  opt.g0 = 100.0;
  const GlobalPriorSpec prior = make_prior(design, fit, data, opt);
  for (const auto& spec : prior.mixture) {
    REQUIRE(spec.psi_mode == PsiMode::Random);
    REQUIRE_THAT(spec.G0 / (spec.g0 - 1.0), WithinRel(spec.V / opt.nu, 1e-12));
  }
}

TEST_CASE("global psi pools the pilot effects of all covariates") {
  const Dataset data = two_covariate_data();
  const DesignMatrix design = build_design(data);
  const FlatFit fit = flat_fit(design.matrix, data.response);
  PriorOptions opt;
  opt.nu = 100.0;
  opt.global_psi = true;
  const GlobalPriorSpec prior = make_prior(design, fit, data, opt);
  // pooled effects (1, 2, 3): V = 1, same for both covariates
  REQUIRE_THAT(prior.mixture[0].V, WithinAbs(1.0, 1e-8));
  REQUIRE_THAT(prior.mixture[1].V, WithinAbs(1.0, 1e-8));
  // m0/M0 remain per covariate
  REQUIRE_THAT(prior.mixture[0].m0, WithinAbs(1.5, 1e-8));
}
