// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cfloat>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "effectfuse/common.hpp"

namespace effectfuse {

// All random draws in the library go through this wrapper so that a run is
// reproducible from a single 64-bit seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::mt19937_64& engine() { return gen_; }

  // U(0,1), never exactly 0 or 1.
  double uniform() {
    double u = unit_(gen_);
    return u > 0.0 ? u : DBL_MIN;
  }

  double normal(double mean, double sd) {
    return mean + sd * std_normal_(gen_);
  }

  // Gamma(shape, scale); mean = shape * scale.
  double gamma(double shape, double scale) {
    return std::exp(log_gamma(shape)) * scale;
  }

  // log of a Gamma(shape, 1) draw. For shape < 1 the draw itself underflows
  // to zero with noticeable probability (shape ~ 0.01 gives exact zeros from
  // std::gamma_distribution), so the boost X = Y * U^{1/shape} with
  // Y ~ Gamma(shape+1) is applied in log space.
  double log_gamma(double shape) {
    if (!(shape > 0.0)) throw NumericalError("gamma shape must be positive");
    if (shape >= 1.0) {
      std::gamma_distribution<double> g(shape, 1.0);
      return std::log(g(gen_));
    }
    std::gamma_distribution<double> g(shape + 1.0, 1.0);
    return std::log(g(gen_)) + std::log(uniform()) / shape;
  }

  // X ~ InvGamma(shape, scale): density ~ x^{-shape-1} exp(-scale/x),
  // so X = scale / Gamma(shape, 1).
  double inv_gamma(double shape, double scale) {
    if (!(scale > 0.0)) throw NumericalError("inverse gamma scale must be positive");
    return scale / std::exp(log_gamma(shape));
  }

  // Dirichlet draw returned in log space: log w_l with sum(exp) = 1 exactly
  // up to rounding. Safe for concentrations far below 1.
  void dirichlet_log(std::span<const double> conc, std::span<double> log_w) {
    const std::size_t m = conc.size();
    double max_lg = -HUGE_VAL;
    for (std::size_t l = 0; l < m; ++l) {
      log_w[l] = log_gamma(conc[l]);
      if (log_w[l] > max_lg) max_lg = log_w[l];
    }
    double sum = 0.0;
    for (std::size_t l = 0; l < m; ++l) sum += std::exp(log_w[l] - max_lg);
    const double log_total = max_lg + std::log(sum);
    for (std::size_t l = 0; l < m; ++l) log_w[l] -= log_total;
  }

  // Index draw from unnormalized log probabilities via log-sum-exp.
  int categorical_from_log(std::span<const double> log_p) {
    const std::size_t m = log_p.size();
    double max_lp = -HUGE_VAL;
    for (double lp : log_p)
      if (lp > max_lp) max_lp = lp;
    if (!(max_lp > -HUGE_VAL))
      throw NumericalError("all categorical log probabilities are -inf");
    double total = 0.0;
    for (double lp : log_p) total += std::exp(lp - max_lp);
    double u = uniform() * total;
    double cum = 0.0;
    for (std::size_t l = 0; l < m; ++l) {
      cum += std::exp(log_p[l] - max_lp);
      if (u <= cum) return static_cast<int>(l);
    }
    return static_cast<int>(m - 1);
  }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

}  // namespace effectfuse
