// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"
#include "effectfuse/gibbs.hpp"
#include "effectfuse/partition.hpp"
#include "effectfuse/prior.hpp"

namespace effectfuse {

// Design matrix after fusing levels: per categorical covariate, every
// non-baseline block of its partition becomes one column (the sum of its
// members' dummies); the baseline block contributes no column. Continuous
// covariates and the intercept pass through.
struct FusedDesign {
  Eigen::MatrixXd matrix;
  std::vector<std::string> column_names;
  std::vector<LevelPartition> partitions;
  std::vector<int> full_to_fused;  // full design column -> fused column, -1 if fused away
  CoefficientLayout full_layout;
};

inline FusedDesign build_fused_design(const DesignMatrix& design,
                                      const std::vector<LevelPartition>& partitions) {
  const auto& layout = design.layout;
  if (partitions.size() != layout.categorical_span.size())
    throw DataError("one partition per categorical covariate is required");

  FusedDesign fused;
  fused.partitions = partitions;
  fused.full_layout = layout;
  fused.full_to_fused.assign(layout.columns(), -1);

  int fused_cols = 1;
  for (std::size_t j = 0; j < partitions.size(); ++j) {
    const auto [first, count] = layout.categorical_span[j];
    if (partitions[j].element_count() != count + 1)
      throw DataError("partition for covariate " + std::to_string(j) +
                      " covers " + std::to_string(partitions[j].element_count()) +
                      " pseudo-levels, expected " + std::to_string(count + 1));
    fused_cols += partitions[j].block_count() - 1;
    (void)first;
  }
  fused_cols += static_cast<int>(layout.continuous_column.size());

  fused.matrix = Eigen::MatrixXd::Zero(design.matrix.rows(), fused_cols);
  fused.matrix.col(0) = design.matrix.col(0);
  fused.column_names.push_back("(Intercept)");
  fused.full_to_fused[0] = 0;

  int col = 1;
  for (std::size_t j = 0; j < partitions.size(); ++j) {
    const auto [first, count] = layout.categorical_span[j];
    const auto blocks = partitions[j].blocks();
    // the term names are "covariate:level"; recover the pieces for labels
    const std::string& head = layout.terms[first].name;
    const std::string cov_name = head.substr(0, head.find(':'));
    for (std::size_t b = 1; b < blocks.size(); ++b) {  // block 0 stays at the baseline
      std::string label = cov_name + ":{";
      for (std::size_t i = 0; i < blocks[b].size(); ++i) {
        const int level = blocks[b][i];
        const int full_col = first + level - 1;
        fused.matrix.col(col) += design.matrix.col(full_col);
        fused.full_to_fused[full_col] = col;
        const std::string& term = layout.terms[full_col].name;
        label += (i ? "," : "") + term.substr(term.find(':') + 1);
      }
      label += "}";
      fused.column_names.push_back(std::move(label));
      ++col;
    }
  }
  for (int full_col : layout.continuous_column) {
    fused.matrix.col(col) = design.matrix.col(full_col);
    fused.full_to_fused[full_col] = col;
    fused.column_names.push_back(layout.terms[full_col].name);
    ++col;
  }
  return fused;
}

// Lift a fused coefficient vector back to the full layout; levels fused with
// the baseline get coefficient 0.
inline Eigen::VectorXd expand_to_full(const FusedDesign& fused,
                                      const Eigen::VectorXd& coef) {
  if (coef.size() != fused.matrix.cols())
    throw DataError("fused coefficient vector has wrong length");
  Eigen::VectorXd full = Eigen::VectorXd::Zero(fused.full_layout.columns());
  for (int c = 0; c < fused.full_layout.columns(); ++c)
    if (fused.full_to_fused[c] >= 0) full[c] = coef[fused.full_to_fused[c]];
  return full;
}

// Refit of the selected model under a flat N(0, B0 I) prior on all fused
// coefficients, improper prior on sigma^2. Same Gibbs machinery with no
// mixture blocks.
struct RefitResult {
  FlatFit pilot;
  McmcTrace trace;
};

inline RefitResult refit_flat(const FusedDesign& fused, const Eigen::VectorXd& y,
                              double B0, const SamplerConfig& cfg) {
  if (!(B0 > 0.0)) throw ConfigError("B0 must be positive");
  GlobalPriorSpec prior;
  prior.intercept_variance = B0;
  prior.flat_variance = B0;
  RefitResult out;
  out.pilot = flat_fit(fused.matrix, y);
  GibbsSampler sampler(fused.matrix, y, prior, {});
  SamplerConfig run_cfg = cfg;
  run_cfg.record_allocations = false;
  run_cfg.record_mixture_params = false;
  out.trace = sampler.run(sampler.init_state(out.pilot), run_cfg);
  return out;
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

// Highest posterior density interval: the shortest window that contains
// ceil(level * n) of the sorted draws.
inline Interval hpd_interval(const Eigen::VectorXd& draws, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("HPD level must lie in (0, 1)");
  const Eigen::Index n = draws.size();
  if (n < 10) throw DataError("too few draws for an HPD interval");
  std::vector<double> sorted(draws.data(), draws.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const Eigen::Index keep = static_cast<Eigen::Index>(
      std::ceil(level * static_cast<double>(n)));
  Interval best{sorted.front(), sorted[keep - 1]};
  for (Eigen::Index i = 1; i + keep <= n; ++i)
    if (sorted[i + keep - 1] - sorted[i] < best.upper - best.lower)
      best = {sorted[i], sorted[i + keep - 1]};
  return best;
}

struct CoefficientSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  Interval hpd;
};

inline CoefficientSummary summarize_draws(const std::string& name,
                                          const Eigen::VectorXd& draws,
                                          double level = 0.95) {
  CoefficientSummary s;
  s.name = name;
  s.mean = draws.mean();
  s.sd = std::sqrt((draws.array() - s.mean).square().sum() /
                   std::max<Eigen::Index>(draws.size() - 1, 1));
  s.hpd = hpd_interval(draws, level);
  return s;
}

// Model-averaged estimate: posterior means (and HPD bands) over the raw
// fusion trace, no partition selected.
inline std::vector<CoefficientSummary> model_averaged(
    const McmcTrace& trace, const std::vector<std::string>& names,
    double level = 0.95) {
  if (static_cast<Eigen::Index>(names.size()) != trace.beta.cols())
    throw DataError("one name per coefficient column is required");
  std::vector<CoefficientSummary> out;
  out.reserve(names.size());
  for (Eigen::Index c = 0; c < trace.beta.cols(); ++c)
    out.push_back(summarize_draws(names[c], trace.beta.col(c), level));
  return out;
}

// -2 log likelihood of the Gaussian linear model.
inline double gaussian_deviance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& coef, double sigma2) {
  if (!(sigma2 > 0.0)) throw NumericalError("deviance needs sigma^2 > 0");
  const double rss = (y - X * coef).squaredNorm();
  return static_cast<double>(y.size()) * std::log(2.0 * M_PI * sigma2) + rss / sigma2;
}

// DIC with the plug-in at the posterior means of (beta, sigma^2), and the
// MCMC version of BIC: -2 max log likelihood over the draws plus d log N
// with d counting the regression coefficients and sigma^2.
struct InformationCriteria {
  double dic = 0.0;
  double p_d = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  double bic_mcmc = 0.0;
  double min_deviance = 0.0;
  int d = 0;
};

inline InformationCriteria information_criteria(const McmcTrace& trace,
                                                const Eigen::MatrixXd& X,
                                                const Eigen::VectorXd& y) {
  if (trace.draws() < 1) throw DataError("empty trace");
  if (trace.beta.cols() != X.cols()) throw DataError("trace does not match design");
  if (X.rows() != y.size()) throw DataError("response length does not match design rows");
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd XtX = X.transpose() * X;
  const Eigen::VectorXd Xty = X.transpose() * y;
  const double yty = y.squaredNorm();
  const double log2pi = std::log(2.0 * M_PI);

  InformationCriteria ic;
  ic.min_deviance = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < trace.draws(); ++r) {
    const Eigen::VectorXd b = trace.beta.row(r);
    const double rss =
        std::max(yty - 2.0 * b.dot(Xty) + b.dot(XtX * b), 0.0);
    const double dev = static_cast<double>(n) * (log2pi + std::log(trace.sigma2[r])) +
                       rss / trace.sigma2[r];
    ic.mean_deviance += dev;
    ic.min_deviance = std::min(ic.min_deviance, dev);
  }
  ic.mean_deviance /= static_cast<double>(trace.draws());

  const Eigen::VectorXd beta_mean = trace.beta.colwise().mean();
  const double sigma2_mean = trace.sigma2.mean();
  const double rss_mean = std::max(
      yty - 2.0 * beta_mean.dot(Xty) + beta_mean.dot(XtX * beta_mean), 0.0);
  ic.deviance_at_mean =
      static_cast<double>(n) * (log2pi + std::log(sigma2_mean)) + rss_mean / sigma2_mean;
  ic.p_d = ic.mean_deviance - ic.deviance_at_mean;
  ic.dic = ic.mean_deviance + ic.p_d;
  ic.d = static_cast<int>(X.cols()) + 1;
  ic.bic_mcmc = ic.min_deviance + ic.d * std::log(static_cast<double>(n));
  return ic;
}

}  // namespace effectfuse
