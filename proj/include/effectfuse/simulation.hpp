// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"
#include "effectfuse/gibbs.hpp"
#include "effectfuse/metrics.hpp"
#include "effectfuse/partition.hpp"
#include "effectfuse/prior.hpp"
#include "effectfuse/refit.hpp"
#include "effectfuse/rng.hpp"

namespace effectfuse {

enum class Strategy { Most, Pam };

inline const char* to_string(Strategy s) {
  return s == Strategy::Most ? "most" : "pam";
}

// One categorical covariate of the simulation: effects[k] belongs to level
// k + 1, the baseline effect is 0. Levels are drawn uniformly.
struct SimCovariate {
  std::string name;
  Eigen::VectorXd effects;
};

struct StudyCell {
  PsiMode psi_mode = PsiMode::Fixed;
  double nu = 1e3;
};

struct SimDesign {
  std::vector<SimCovariate> covariates;
  double intercept = 0.0;
  double noise_variance = 0.5;
  int n = 4000;
  int test_n = 1000;
  int replications = 100;
  std::vector<StudyCell> cells;
  int iterations = 15000;
  int burn_in = 15000;
  int refit_iterations = 3000;
  int refit_burn_in = 1000;
  double e0 = 0.01;
  double g0 = 100.0;
  double refit_B0 = 1e4;
  int k_max = 30;
  std::uint64_t seed = 1;
};

inline void validate(const SimDesign& design) {
  if (design.covariates.empty()) throw ConfigError("simulation needs covariates");
  for (const auto& cov : design.covariates)
    if (cov.effects.size() < 1)
      throw ConfigError("covariate '" + cov.name + "' has no effects");
  if (!(design.noise_variance > 0.0)) throw ConfigError("noise variance must be positive");
  if (design.n < 2) throw ConfigError("n must be at least 2");
  if (design.test_n < 1) throw ConfigError("test_n must be at least 1");
  if (design.replications < 1) throw ConfigError("replications must be at least 1");
  if (design.cells.empty()) throw ConfigError("no study cells configured");
  for (const auto& cell : design.cells)
    if (!(cell.nu > 0.0)) throw ConfigError("nu must be positive");
  if (design.iterations < 1 || design.refit_iterations < 1)
    throw ConfigError("iterations must be at least 1");
  if (design.burn_in < 0 || design.refit_burn_in < 0)
    throw ConfigError("burn-in cannot be negative");
  if (design.k_max < 2) throw ConfigError("k_max must be at least 2");
}

inline std::vector<StudyCell> make_cells(const std::vector<PsiMode>& modes,
                                         const std::vector<double>& nu_grid) {
  std::vector<StudyCell> cells;
  for (PsiMode mode : modes)
    for (double nu : nu_grid) cells.push_back({mode, nu});
  return cells;
}

// The benchmark design: four categorical covariates with 10, 10, 10 and 100
// levels. The first fuses into three groups of effect 0, 0.5 and 1; the
// second has a single standout level; the third carries no effect at all;
// the wide one splits into six value groups 0, 0.5, .., 2.5 spread evenly
// over its levels.
inline SimDesign default_design() {
  SimDesign design;
  auto block_effects = [](const std::vector<std::pair<double, int>>& runs) {
    std::vector<double> eff;
    for (const auto& [value, len] : runs) eff.insert(eff.end(), len, value);
    return Eigen::Map<Eigen::VectorXd>(eff.data(), eff.size()).eval();
  };
  design.covariates.push_back({"x1", block_effects({{0.0, 3}, {0.5, 3}, {1.0, 3}})});
  design.covariates.push_back({"x2", block_effects({{0.0, 8}, {1.0, 1}})});
  design.covariates.push_back({"x3", block_effects({{0.0, 9}})});
  design.covariates.push_back({"x4", block_effects({{0.0, 16},
                                                    {0.5, 17},
                                                    {1.0, 17},
                                                    {1.5, 17},
                                                    {2.0, 16},
                                                    {2.5, 16}})});
  design.cells = make_cells({PsiMode::Fixed, PsiMode::Random},
                            {1e1, 1e2, 1e3, 1e4, 1e5, 1e6});
  return design;
}

// Same design shrunk to run on one machine in minutes rather than days.
inline SimDesign desk_scale_design() {
  SimDesign design = default_design();
  design.n = 2000;
  design.replications = 20;
  design.iterations = 5000;
  design.burn_in = 5000;
  design.cells = make_cells({PsiMode::Fixed}, {1e2, 1e3, 1e4, 1e5, 1e6});
  for (const StudyCell& cell : make_cells({PsiMode::Random}, {1e3, 1e4, 1e5, 1e6}))
    design.cells.push_back(cell);
  return design;
}

struct SimData {
  Dataset train;
  Dataset test;
  Eigen::VectorXd true_coef;  // full layout of the training design
  std::vector<LevelPartition> true_partitions;
};

// True partition of the pseudo-levels of one covariate: levels with equal
// effects share a block, the baseline sits with the zero-effect levels.
inline LevelPartition true_partition(const SimCovariate& cov) {
  std::vector<int> labels(cov.effects.size() + 1);
  std::map<double, int> group;
  group[0.0] = 0;
  labels[0] = 0;
  for (Eigen::Index k = 0; k < cov.effects.size(); ++k) {
    auto [it, inserted] =
        group.try_emplace(cov.effects[k], static_cast<int>(group.size()));
    labels[k + 1] = it->second;
    (void)inserted;
  }
  return LevelPartition(cov.name, labels);
}

namespace detail {

inline Dataset draw_dataset(const SimDesign& design, int n, Rng& rng) {
  Dataset data;
  data.response.resize(n);
  const double sd = std::sqrt(design.noise_variance);
  std::vector<Eigen::VectorXd> contrib;
  for (const auto& cov : design.covariates) {
    CategoricalCovariate cat;
    cat.name = cov.name;
    const int levels = static_cast<int>(cov.effects.size()) + 1;
    cat.levels.reserve(levels);
    for (int k = 0; k < levels; ++k) cat.levels.push_back(std::to_string(k + 1));
    cat.codes.resize(n);
    Eigen::VectorXd c(n);
    for (int i = 0; i < n; ++i) {
      const int code = std::min(static_cast<int>(rng.uniform() * levels), levels - 1);
      cat.codes[i] = code;
      c[i] = code == 0 ? 0.0 : cov.effects[code - 1];
    }
    contrib.push_back(std::move(c));
    data.categorical.push_back(std::move(cat));
  }
  for (int i = 0; i < n; ++i) {
    double mean = design.intercept;
    for (const auto& c : contrib) mean += c[i];
    data.response[i] = rng.normal(mean, sd);
  }
  return data;
}

}  // namespace detail

// Training and test data for one replication, deterministic in
// (design.seed, rep). A training draw that leaves some level unobserved
// (possible, vanishingly rare) is redrawn from the next derived seed.
inline SimData generate(const SimDesign& design, int rep) {
  validate(design);
  SimData sim;
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(design.seed, {0xD47Aull, static_cast<std::uint64_t>(rep), attempt}));
    sim.train = detail::draw_dataset(design, design.n, rng);
    sim.test = detail::draw_dataset(design, design.test_n, rng);
    try {
      sim.train.validate();
      break;
    } catch (const DataError&) {
      if (attempt == 32) throw;
    }
  }
  CoefficientVector coef;
  coef.intercept = design.intercept;
  for (const auto& cov : design.covariates) coef.categorical.push_back(cov.effects);
  coef.continuous.resize(0);
  const DesignMatrix dm = build_design(sim.train);
  sim.true_coef = flatten(coef, dm.layout);
  for (const auto& cov : design.covariates)
    sim.true_partitions.push_back(true_partition(cov));
  return sim;
}

// Long-format record of one partition selection: covariate x strategy x cell
// x replication.
struct SelectionRecord {
  int rep = 0;
  std::string psi_mode;
  double nu = 0.0;
  std::string covariate;
  std::string strategy;
  int groups = 0;
  double ar = 0.0;
  double err = 0.0;
  std::optional<double> fpr, fnr;
  long freq = 0;  // most: modal partition frequency
  bool tied = false;
  int k = 0;  // pam: chosen cluster count
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  bool one_cluster_suspected = false;
};

// Estimation record for one point estimator on one replication. full/true
// refits do not depend on the cell; they are stored once per replication
// with empty psi_mode and nu = NaN.
struct FitRecord {
  int rep = 0;
  std::string psi_mode;
  double nu = std::numeric_limits<double>::quiet_NaN();
  std::string estimator;  // most | pam | av | full | true
  double mse = 0.0;
  double mspe = 0.0;
  double dic = std::numeric_limits<double>::quiet_NaN();
  double p_d = std::numeric_limits<double>::quiet_NaN();
  double bic_mcmc = std::numeric_limits<double>::quiet_NaN();
};

struct StudyResult {
  SimDesign design;
  std::vector<SelectionRecord> selection;
  std::vector<FitRecord> fits;
};

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

struct RepOutput {
  std::vector<SelectionRecord> selection;
  std::vector<FitRecord> fits;
};

inline FitRecord make_fit_record(const FusedDesign& fused, const RefitResult& refit,
                                 const SimData& sim, const Eigen::MatrixXd& X_train,
                                 const Eigen::MatrixXd& X_test,
                                 const CoefficientLayout& layout) {
  FitRecord rec;
  const Eigen::VectorXd fused_mean = refit.trace.beta.colwise().mean();
  const Eigen::VectorXd full_mean = expand_to_full(fused, fused_mean);
  rec.mse = mse(full_mean, sim.true_coef, layout);
  rec.mspe = mspe(X_test, sim.test.response, full_mean);
  const InformationCriteria ic =
      information_criteria(refit.trace, fused.matrix, sim.train.response);
  rec.dic = ic.dic;
  rec.p_d = ic.p_d;
  rec.bic_mcmc = ic.bic_mcmc;
  (void)X_train;
  return rec;
}

inline RepOutput run_replication(const SimDesign& design, int rep) {
  RepOutput out;
  const SimData sim = generate(design, rep);
  const DesignMatrix dm = build_design(sim.train);

  // test design reuses the training level sets; unseen levels are fine there
  Dataset test = sim.test;
  const DesignMatrix dm_test = build_design(test, false);

  SamplerConfig refit_cfg;
  refit_cfg.iterations = design.refit_iterations;
  refit_cfg.burn_in = design.refit_burn_in;

  // cell-independent references: the unfused model and the true grouping
  {
    std::vector<LevelPartition> identity;
    for (std::size_t j = 0; j < design.covariates.size(); ++j) {
      std::vector<int> labels(design.covariates[j].effects.size() + 1);
      for (std::size_t e = 0; e < labels.size(); ++e) labels[e] = static_cast<int>(e);
      identity.emplace_back(design.covariates[j].name, labels);
    }
    const FusedDesign full = build_fused_design(dm, identity);
    refit_cfg.seed = derive_seed(design.seed, {2, static_cast<std::uint64_t>(rep), 0});
    FitRecord rec = make_fit_record(full, refit_flat(full, sim.train.response,
                                                     design.refit_B0, refit_cfg),
                                    sim, dm.matrix, dm_test.matrix, dm.layout);
    rec.rep = rep;
    rec.estimator = "full";
    out.fits.push_back(rec);

    const FusedDesign truth = build_fused_design(dm, sim.true_partitions);
    refit_cfg.seed = derive_seed(design.seed, {2, static_cast<std::uint64_t>(rep), 1});
    rec = make_fit_record(truth, refit_flat(truth, sim.train.response,
                                            design.refit_B0, refit_cfg),
                          sim, dm.matrix, dm_test.matrix, dm.layout);
    rec.rep = rep;
    rec.estimator = "true";
    out.fits.push_back(rec);
  }

  for (std::size_t ci = 0; ci < design.cells.size(); ++ci) {
    const StudyCell& cell = design.cells[ci];
    PriorOptions prior_opt;
    prior_opt.nu = cell.nu;
    prior_opt.e0 = design.e0;
    prior_opt.g0 = design.g0;
    prior_opt.psi_mode = cell.psi_mode;

    SamplerConfig cfg;
    cfg.iterations = design.iterations;
    cfg.burn_in = design.burn_in;
    cfg.seed = derive_seed(design.seed,
                           {1, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(ci)});
    const FusionFit fit = fuse(dm, sim.train.response, sim.train, prior_opt, cfg);

    std::vector<LevelPartition> most_parts, pam_parts;
    for (std::size_t j = 0; j < design.covariates.size(); ++j) {
      const std::string& name = design.covariates[j].name;
      const MostFrequentResult most = most_frequent_partition(fit.trace.alloc[j], name);
      const Eigen::MatrixXd C = accumulate_cocluster(fit.trace.alloc[j]);
      const PamSelectionResult pam_sel = select_by_pam(C, name, design.k_max);
      most_parts.push_back(most.partition);
      pam_parts.push_back(pam_sel.partition);

      for (Strategy strategy : {Strategy::Most, Strategy::Pam}) {
        const LevelPartition& est =
            strategy == Strategy::Most ? most.partition : pam_sel.partition;
        SelectionRecord rec;
        rec.rep = rep;
        rec.psi_mode = to_string(cell.psi_mode);
        rec.nu = cell.nu;
        rec.covariate = name;
        rec.strategy = to_string(strategy);
        rec.groups = est.block_count();
        rec.ar = adjusted_rand(sim.true_partitions[j], est);
        rec.err = error_rate(sim.true_partitions[j], est);
        const PairConfusion pc = pair_confusion(sim.true_partitions[j], est);
        rec.fpr = pc.fpr;
        rec.fnr = pc.fnr;
        if (strategy == Strategy::Most) {
          rec.freq = most.frequency;
          rec.tied = most.tied;
        } else {
          rec.k = pam_sel.k;
          rec.silhouette = pam_sel.silhouette;
          rec.one_cluster_suspected = pam_sel.one_cluster_suspected;
        }
        out.selection.push_back(std::move(rec));
      }
    }

    // point estimates: refits of the two selected models, and the
    // model-averaged posterior mean of the raw fusion trace
    for (Strategy strategy : {Strategy::Most, Strategy::Pam}) {
      const FusedDesign fused = build_fused_design(
          dm, strategy == Strategy::Most ? most_parts : pam_parts);
      refit_cfg.seed =
          derive_seed(design.seed, {3, static_cast<std::uint64_t>(rep),
                                    static_cast<std::uint64_t>(ci),
                                    static_cast<std::uint64_t>(strategy == Strategy::Pam)});
      FitRecord rec = make_fit_record(fused, refit_flat(fused, sim.train.response,
                                                        design.refit_B0, refit_cfg),
                                      sim, dm.matrix, dm_test.matrix, dm.layout);
      rec.rep = rep;
      rec.psi_mode = to_string(cell.psi_mode);
      rec.nu = cell.nu;
      rec.estimator = to_string(strategy);
      out.fits.push_back(std::move(rec));
    }
    {
      FitRecord rec;
      rec.rep = rep;
      rec.psi_mode = to_string(cell.psi_mode);
      rec.nu = cell.nu;
      rec.estimator = "av";
      const Eigen::VectorXd av_mean = fit.trace.beta.colwise().mean();
      rec.mse = mse(av_mean, sim.true_coef, dm.layout);
      rec.mspe = mspe(dm_test.matrix, sim.test.response, av_mean);
      out.fits.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace detail

// Runs the whole study: replications x cells, with the full and true-model
// reference refits once per replication. Replications are independent and
// may run on several threads; outputs are merged in replication order, so
// the result does not depend on the thread count.
inline StudyResult run_study(const SimDesign& design, unsigned threads = 1,
                             const ProgressFn& progress = {}) {
  validate(design);
  std::vector<detail::RepOutput> outputs(design.replications);
  std::mutex progress_mutex;
  parallel_for(design.replications, threads, [&](int rep) {
    outputs[rep] = detail::run_replication(design, rep);
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress("replication " + std::to_string(rep + 1) + "/" +
               std::to_string(design.replications));
    }
  });
  StudyResult result;
  result.design = design;
  for (auto& out : outputs) {
    result.selection.insert(result.selection.end(), out.selection.begin(),
                            out.selection.end());
    result.fits.insert(result.fits.end(), out.fits.begin(), out.fits.end());
  }
  return result;
}

// Mean over replications of one (cell, covariate, strategy) slice.
struct SelectionSummary {
  double groups = 0.0;
  double ar = 0.0;
  double err = 0.0;
  std::optional<double> fpr, fnr;
  double freq = 0.0;
  long count = 0;
};

inline SelectionSummary summarize_selection(const StudyResult& result,
                                            const std::string& psi_mode, double nu,
                                            const std::string& covariate,
                                            const std::string& strategy) {
  SelectionSummary s;
  double fpr_sum = 0.0, fnr_sum = 0.0;
  long fpr_n = 0, fnr_n = 0;
  for (const auto& rec : result.selection) {
    if (rec.psi_mode != psi_mode || rec.nu != nu || rec.covariate != covariate ||
        rec.strategy != strategy)
      continue;
    s.groups += rec.groups;
    s.ar += rec.ar;
    s.err += rec.err;
    s.freq += static_cast<double>(rec.freq);
    if (rec.fpr) fpr_sum += *rec.fpr, ++fpr_n;
    if (rec.fnr) fnr_sum += *rec.fnr, ++fnr_n;
    ++s.count;
  }
  if (s.count > 0) {
    s.groups /= s.count;
    s.ar /= s.count;
    s.err /= s.count;
    s.freq /= s.count;
    if (fpr_n > 0) s.fpr = fpr_sum / fpr_n;
    if (fnr_n > 0) s.fnr = fnr_sum / fnr_n;
  }
  return s;
}

struct FitSummary {
  double mse = 0.0;
  double mspe = 0.0;
  double dic = 0.0;
  double p_d = 0.0;
  double bic_mcmc = 0.0;
  long count = 0;
};

// Mean over replications for one estimator; psi_mode/nu are ignored for the
// cell-independent estimators full and true.
inline FitSummary summarize_fits(const StudyResult& result, const std::string& psi_mode,
                                 double nu, const std::string& estimator) {
  FitSummary s;
  const bool cell_free = estimator == "full" || estimator == "true";
  for (const auto& rec : result.fits) {
    if (rec.estimator != estimator) continue;
    if (!cell_free && (rec.psi_mode != psi_mode || rec.nu != nu)) continue;
    s.mse += rec.mse;
    s.mspe += rec.mspe;
    if (std::isfinite(rec.dic)) {
      s.dic += rec.dic;
      s.p_d += rec.p_d;
      s.bic_mcmc += rec.bic_mcmc;
    }
    ++s.count;
  }
  if (s.count > 0) {
    s.mse /= s.count;
    s.mspe /= s.count;
    if (estimator != "av") {
      s.dic /= s.count;
      s.p_d /= s.count;
      s.bic_mcmc /= s.count;
    }
  }
  return s;
}

}  // namespace effectfuse
