// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"
#include "effectfuse/gibbs.hpp"
#include "effectfuse/io.hpp"
#include "effectfuse/metrics.hpp"
#include "effectfuse/partition.hpp"
#include "effectfuse/prior.hpp"
#include "effectfuse/refit.hpp"
#include "effectfuse/simulation.hpp"

namespace effectfuse {

namespace cfg {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& context,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(context + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + context);
  }
}

inline double get_number(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError("'" + key + "' must be a number");
  return obj[key].get<double>();
}

inline int get_int(const json& obj, const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
  return obj[key].get<int>();
}

inline std::uint64_t get_seed(const json& obj, const std::string& key,
                              std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_unsigned() && !obj[key].is_number_integer())
    throw ConfigError("'" + key + "' must be a non-negative integer");
  if (obj[key].is_number_integer() && obj[key].get<long long>() < 0)
    throw ConfigError("'" + key + "' must be a non-negative integer");
  return obj[key].get<std::uint64_t>();
}

inline bool get_bool(const json& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
  return obj[key].get<bool>();
}

inline std::string get_string(const json& obj, const std::string& key,
                              const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw ConfigError("'" + key + "' must be a string");
  return obj[key].get<std::string>();
}

inline PsiMode parse_psi_mode(const std::string& text) {
  if (text == "fixed") return PsiMode::Fixed;
  if (text == "random") return PsiMode::Random;
  throw ConfigError("psi_mode must be 'fixed' or 'random', got '" + text + "'");
}

}  // namespace cfg

// Configuration of the fit command: data source, prior, sampler, selection
// and refit settings, output location.
struct FitConfig {
  std::string data_path;
  DataRequest request;
  PriorOptions prior;
  SamplerConfig sampler{5000, 5000, 1, 1, true, false};
  std::string strategy = "both";  // most | pam | both
  int k_max = 30;
  int refit_iterations = 3000;
  int refit_burn_in = 1000;
  double refit_B0 = 1e4;
  double hpd_level = 0.95;
  std::string out_dir = "effectfuse_out";
  bool dump_trace = false;
};

inline void validate(const FitConfig& config) {
  if (config.data_path.empty()) throw ConfigError("data.path is required");
  if (config.request.response.empty()) throw ConfigError("data.response is required");
  if (config.request.categorical.empty())
    throw ConfigError("data.categorical must name at least one covariate");
  if (config.strategy != "most" && config.strategy != "pam" && config.strategy != "both")
    throw ConfigError("strategy must be 'most', 'pam' or 'both'");
  if (config.k_max < 2) throw ConfigError("k_max must be at least 2");
  if (config.refit_iterations < 1) throw ConfigError("refit iterations must be at least 1");
  if (config.refit_burn_in < 0) throw ConfigError("refit burn-in cannot be negative");
  if (!(config.refit_B0 > 0.0)) throw ConfigError("refit B0 must be positive");
  if (!(config.hpd_level > 0.0 && config.hpd_level < 1.0))
    throw ConfigError("hpd_level must lie in (0, 1)");
  if (config.out_dir.empty()) throw ConfigError("output.dir must not be empty");
  validate(config.prior);
  validate(config.sampler);
}

inline FitConfig fit_config_from_json(const cfg::json& root) {
  using namespace cfg;
  check_keys(root, "config",
             {"data", "prior", "sampler", "selection", "refit", "output"});
  FitConfig config;
  if (!root.contains("data")) throw ConfigError("config needs a 'data' section");
  {
    const json& data = root["data"];
    check_keys(data, "data", {"path", "response", "categorical", "continuous"});
    config.data_path = get_string(data, "path", "");
    config.request.response = get_string(data, "response", "");
    if (data.contains("categorical")) {
      if (!data["categorical"].is_array())
        throw ConfigError("data.categorical must be an array");
      for (const json& entry : data["categorical"]) {
        CovariateRequest req;
        if (entry.is_string()) {
          req.name = entry.get<std::string>();
        } else if (entry.is_object()) {
          check_keys(entry, "data.categorical entry", {"name", "baseline"});
          req.name = get_string(entry, "name", "");
          if (entry.contains("baseline")) req.baseline = get_string(entry, "baseline", "");
        } else {
          throw ConfigError("data.categorical entries must be names or objects");
        }
        if (req.name.empty()) throw ConfigError("categorical covariate without a name");
        config.request.categorical.push_back(std::move(req));
      }
    }
    if (data.contains("continuous")) {
      if (!data["continuous"].is_array())
        throw ConfigError("data.continuous must be an array");
      for (const json& entry : data["continuous"]) {
        if (!entry.is_string()) throw ConfigError("data.continuous entries must be names");
        config.request.continuous.push_back(entry.get<std::string>());
      }
    }
  }
  if (root.contains("prior")) {
    const json& prior = root["prior"];
    check_keys(prior, "prior",
               {"nu", "e0", "psi_mode", "g0", "global_psi", "intercept_variance",
                "flat_variance"});
    config.prior.nu = get_number(prior, "nu", config.prior.nu);
    config.prior.e0 = get_number(prior, "e0", config.prior.e0);
    config.prior.psi_mode = parse_psi_mode(get_string(prior, "psi_mode", "fixed"));
    config.prior.g0 = get_number(prior, "g0", config.prior.g0);
    config.prior.global_psi = get_bool(prior, "global_psi", false);
    config.prior.intercept_variance =
        get_number(prior, "intercept_variance", config.prior.intercept_variance);
    config.prior.flat_variance =
        get_number(prior, "flat_variance", config.prior.flat_variance);
  }
  if (root.contains("sampler")) {
    const json& sampler = root["sampler"];
    check_keys(sampler, "sampler", {"iterations", "burn_in", "thin", "seed"});
    config.sampler.iterations = get_int(sampler, "iterations", config.sampler.iterations);
    config.sampler.burn_in = get_int(sampler, "burn_in", config.sampler.burn_in);
    config.sampler.thin = get_int(sampler, "thin", config.sampler.thin);
    config.sampler.seed = get_seed(sampler, "seed", config.sampler.seed);
  }
  if (root.contains("selection")) {
    const json& selection = root["selection"];
    check_keys(selection, "selection", {"strategy", "k_max"});
    config.strategy = get_string(selection, "strategy", config.strategy);
    config.k_max = get_int(selection, "k_max", config.k_max);
  }
  if (root.contains("refit")) {
    const json& refit = root["refit"];
    check_keys(refit, "refit", {"iterations", "burn_in", "B0"});
    config.refit_iterations = get_int(refit, "iterations", config.refit_iterations);
    config.refit_burn_in = get_int(refit, "burn_in", config.refit_burn_in);
    config.refit_B0 = get_number(refit, "B0", config.refit_B0);
  }
  if (root.contains("output")) {
    const json& output = root["output"];
    check_keys(output, "output", {"dir", "hpd_level", "dump_trace"});
    config.out_dir = get_string(output, "dir", config.out_dir);
    config.hpd_level = get_number(output, "hpd_level", config.hpd_level);
    config.dump_trace = get_bool(output, "dump_trace", config.dump_trace);
  }
  validate(config);
  return config;
}

// Config echo for output headers. Filesystem paths are left out so that the
// numeric outputs of identical runs are byte-identical wherever they land.
inline cfg::json to_json(const FitConfig& config, bool include_paths) {
  cfg::json root;
  if (include_paths) root["data"]["path"] = config.data_path;
  root["data"]["response"] = config.request.response;
  for (const auto& req : config.request.categorical) {
    cfg::json entry;
    entry["name"] = req.name;
    if (req.baseline) entry["baseline"] = *req.baseline;
    root["data"]["categorical"].push_back(entry);
  }
  for (const auto& name : config.request.continuous)
    root["data"]["continuous"].push_back(name);
  root["prior"] = {{"nu", config.prior.nu},
                   {"e0", config.prior.e0},
                   {"psi_mode", to_string(config.prior.psi_mode)},
                   {"g0", config.prior.g0},
                   {"global_psi", config.prior.global_psi},
                   {"intercept_variance", config.prior.intercept_variance},
                   {"flat_variance", config.prior.flat_variance}};
  root["sampler"] = {{"iterations", config.sampler.iterations},
                     {"burn_in", config.sampler.burn_in},
                     {"thin", config.sampler.thin},
                     {"seed", config.sampler.seed}};
  root["selection"] = {{"strategy", config.strategy}, {"k_max", config.k_max}};
  root["refit"] = {{"iterations", config.refit_iterations},
                   {"burn_in", config.refit_burn_in},
                   {"B0", config.refit_B0}};
  root["output"] = {{"hpd_level", config.hpd_level}, {"dump_trace", config.dump_trace}};
  if (include_paths) root["output"]["dir"] = config.out_dir;
  return root;
}

inline cfg::json to_json(const SimDesign& design) {
  cfg::json root;
  for (const auto& cov : design.covariates) {
    cfg::json entry;
    entry["name"] = cov.name;
    entry["effects"] = std::vector<double>(cov.effects.data(),
                                           cov.effects.data() + cov.effects.size());
    root["covariates"].push_back(entry);
  }
  root["intercept"] = design.intercept;
  root["noise_variance"] = design.noise_variance;
  root["n"] = design.n;
  root["test_n"] = design.test_n;
  root["replications"] = design.replications;
  for (const auto& cell : design.cells)
    root["cells"].push_back({{"psi_mode", to_string(cell.psi_mode)}, {"nu", cell.nu}});
  root["iterations"] = design.iterations;
  root["burn_in"] = design.burn_in;
  root["refit_iterations"] = design.refit_iterations;
  root["refit_burn_in"] = design.refit_burn_in;
  root["e0"] = design.e0;
  root["g0"] = design.g0;
  root["refit_B0"] = design.refit_B0;
  root["k_max"] = design.k_max;
  root["seed"] = design.seed;
  return root;
}

// Study design from JSON on top of a base design (the benchmark at full or
// desk scale). Cells come either as explicit {psi_mode, nu} pairs or as the
// product of psi_modes and nu_grid.
inline SimDesign sim_design_from_json(const cfg::json& root, SimDesign base) {
  using namespace cfg;
  check_keys(root, "config",
             {"covariates", "intercept", "noise_variance", "n", "test_n",
              "replications", "cells", "nu_grid", "psi_modes", "iterations", "burn_in",
              "refit_iterations", "refit_burn_in", "e0", "g0", "refit_B0", "k_max",
              "seed"});
  SimDesign design = std::move(base);
  if (root.contains("covariates")) {
    if (!root["covariates"].is_array() || root["covariates"].empty())
      throw ConfigError("covariates must be a non-empty array");
    design.covariates.clear();
    for (const json& entry : root["covariates"]) {
      check_keys(entry, "covariate", {"name", "effects"});
      SimCovariate cov;
      cov.name = get_string(entry, "name", "");
      if (cov.name.empty()) throw ConfigError("covariate without a name");
      if (!entry.contains("effects") || !entry["effects"].is_array() ||
          entry["effects"].empty())
        throw ConfigError("covariate '" + cov.name + "' needs a non-empty effects array");
      std::vector<double> effects;
      for (const json& e : entry["effects"]) {
        if (!e.is_number()) throw ConfigError("effects must be numbers");
        effects.push_back(e.get<double>());
      }
      cov.effects = Eigen::Map<Eigen::VectorXd>(effects.data(), effects.size());
      design.covariates.push_back(std::move(cov));
    }
  }
  design.intercept = get_number(root, "intercept", design.intercept);
  design.noise_variance = get_number(root, "noise_variance", design.noise_variance);
  design.n = get_int(root, "n", design.n);
  design.test_n = get_int(root, "test_n", design.test_n);
  design.replications = get_int(root, "replications", design.replications);
  if (root.contains("cells") && (root.contains("nu_grid") || root.contains("psi_modes")))
    throw ConfigError("give either cells or nu_grid/psi_modes, not both");
  if (root.contains("cells")) {
    if (!root["cells"].is_array() || root["cells"].empty())
      throw ConfigError("cells must be a non-empty array");
    design.cells.clear();
    for (const json& entry : root["cells"]) {
      check_keys(entry, "cell", {"psi_mode", "nu"});
      StudyCell cell;
      cell.psi_mode = parse_psi_mode(get_string(entry, "psi_mode", "fixed"));
      cell.nu = get_number(entry, "nu", 0.0);
      design.cells.push_back(cell);
    }
  } else if (root.contains("nu_grid") || root.contains("psi_modes")) {
    std::vector<double> grid;
    if (root.contains("nu_grid")) {
      if (!root["nu_grid"].is_array() || root["nu_grid"].empty())
        throw ConfigError("nu_grid must be a non-empty array");
      for (const json& v : root["nu_grid"]) {
        if (!v.is_number()) throw ConfigError("nu_grid entries must be numbers");
        grid.push_back(v.get<double>());
      }
    } else {
      for (const auto& cell : design.cells)
        if (std::find(grid.begin(), grid.end(), cell.nu) == grid.end())
          grid.push_back(cell.nu);
    }
    std::vector<PsiMode> modes;
    if (root.contains("psi_modes")) {
      if (!root["psi_modes"].is_array() || root["psi_modes"].empty())
        throw ConfigError("psi_modes must be a non-empty array");
      for (const json& v : root["psi_modes"]) {
        if (!v.is_string()) throw ConfigError("psi_modes entries must be strings");
        modes.push_back(parse_psi_mode(v.get<std::string>()));
      }
    } else {
      modes = {PsiMode::Fixed, PsiMode::Random};
    }
    design.cells = make_cells(modes, grid);
  }
  design.iterations = get_int(root, "iterations", design.iterations);
  design.burn_in = get_int(root, "burn_in", design.burn_in);
  design.refit_iterations = get_int(root, "refit_iterations", design.refit_iterations);
  design.refit_burn_in = get_int(root, "refit_burn_in", design.refit_burn_in);
  design.e0 = get_number(root, "e0", design.e0);
  design.g0 = get_number(root, "g0", design.g0);
  design.refit_B0 = get_number(root, "refit_B0", design.refit_B0);
  design.k_max = get_int(root, "k_max", design.k_max);
  design.seed = get_seed(root, "seed", design.seed);
  validate(design);
  return design;
}

namespace detail {

inline std::string repro_header(std::uint64_t seed, const cfg::json& config) {
  return "# seed=" + std::to_string(seed) + " version=" + kVersion +
         " config=" + config.dump() + "\n";
}

inline std::string opt_field(const std::optional<double>& v, int precision = 12) {
  return v ? format_double(*v, precision) : "";
}

inline std::string nan_field(double v, int precision = 12) {
  return std::isfinite(v) ? format_double(v, precision) : "";
}

// Pseudo-level label: the baseline label for 0, otherwise the level label.
inline std::string pseudo_level_label(const CategoricalCovariate& cov, int pseudo) {
  return cov.levels[pseudo];
}

inline cfg::json partition_to_json(const LevelPartition& partition,
                                   const CategoricalCovariate& cov) {
  cfg::json blocks = cfg::json::array();
  for (const auto& block : partition.blocks()) {
    cfg::json labels = cfg::json::array();
    for (int member : block) labels.push_back(pseudo_level_label(cov, member));
    blocks.push_back(labels);
  }
  cfg::json out;
  out["blocks"] = blocks;
  out["groups"] = partition.block_count();
  out["fused_to_baseline"] = [&] {
    cfg::json zb = cfg::json::array();
    for (int member : partition.zero_block())
      if (member != 0) zb.push_back(pseudo_level_label(cov, member));
    return zb;
  }();
  return out;
}

inline std::string summaries_csv(const std::vector<CoefficientSummary>& summaries,
                                 const std::string& header_line) {
  std::string text = header_line;
  text += "name,mean,sd,hpd_lower,hpd_upper\n";
  for (const auto& s : summaries)
    text += csv_row({s.name, format_double(s.mean), format_double(s.sd),
                     format_double(s.hpd.lower), format_double(s.hpd.upper)});
  return text;
}

}  // namespace detail

// Fits the fusion model to a CSV dataset and writes the whole result set:
// co-clustering matrices, selected partitions, refit summaries, information
// criteria, the model-averaged estimate and a machine-readable run log.
inline void run_fit(const FitConfig& config, const ProgressFn& progress = {}) {
  namespace fs = std::filesystem;
  validate(config);
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  const CsvTable table = read_csv(config.data_path);
  const LoadedData loaded = dataset_from_csv(table, config.request);
  const Dataset& data = loaded.data;
  say("data: " + std::to_string(data.n()) + " records used, " +
      std::to_string(loaded.dropped_records) + " dropped");

  const DesignMatrix dm = build_design(data);
  say("design: " + std::to_string(dm.layout.columns()) + " columns");
  say("sampling " + std::to_string(config.sampler.burn_in) + "+" +
      std::to_string(config.sampler.iterations) + " sweeps");
  const FusionFit fit = fuse(dm, data.response, data, config.prior, config.sampler);

  fs::create_directories(config.out_dir);
  const cfg::json config_echo = to_json(config, false);
  const std::string header = detail::repro_header(config.sampler.seed, config_echo);
  std::vector<std::string> files;

  std::vector<std::string> strategies;
  if (config.strategy == "both")
    strategies = {"most", "pam"};
  else
    strategies = {config.strategy};

  // partition selection per covariate
  cfg::json partitions_json;
  partitions_json["seed"] = config.sampler.seed;
  partitions_json["version"] = kVersion;
  partitions_json["config"] = config_echo;
  std::map<std::string, std::vector<LevelPartition>> selected;
  for (std::size_t j = 0; j < data.categorical.size(); ++j) {
    const auto& cov = data.categorical[j];
    say("selecting partition for " + cov.name);
    const Eigen::MatrixXd C = accumulate_cocluster(fit.trace.alloc[j]);
    {
      std::string text = header;
      std::vector<std::string> labels;
      for (int g = 0; g < C.rows(); ++g)
        labels.push_back(detail::pseudo_level_label(cov, g));
      text += csv_row(labels);
      for (Eigen::Index g = 0; g < C.rows(); ++g) {
        std::vector<std::string> row;
        for (Eigen::Index h = 0; h < C.cols(); ++h)
          row.push_back(format_double(C(g, h)));
        text += csv_row(row);
      }
      const std::string name = "cocluster_" + cov.name + ".csv";
      write_text_file(fs::path(config.out_dir) / name, text);
      files.push_back(name);
    }
    cfg::json cov_json;
    cov_json["covariate"] = cov.name;
    for (const std::string& strategy : strategies) {
      if (strategy == "most") {
        const MostFrequentResult most = most_frequent_partition(fit.trace.alloc[j], cov.name);
        cfg::json entry = detail::partition_to_json(most.partition, cov);
        entry["frequency"] = most.frequency;
        entry["draws"] = fit.trace.draws();
        entry["tied"] = most.tied;
        cov_json["most"] = entry;
        selected["most"].push_back(most.partition);
      } else {
        const PamSelectionResult sel = select_by_pam(C, cov.name, config.k_max);
        cfg::json entry = detail::partition_to_json(sel.partition, cov);
        entry["k"] = sel.k;
        entry["silhouette"] = sel.silhouette;
        entry["one_cluster_suspected"] = sel.one_cluster_suspected;
        entry["silhouette_by_k"] = sel.silhouette_by_k;
        cov_json["pam"] = entry;
        selected["pam"].push_back(sel.partition);
      }
    }
    partitions_json["covariates"].push_back(cov_json);
  }
  write_text_file(fs::path(config.out_dir) / "partitions.json",
                  partitions_json.dump(2) + "\n");
  files.push_back("partitions.json");

  // model averaged estimate straight from the fusion trace
  {
    std::vector<std::string> names;
    for (const auto& term : dm.layout.terms) names.push_back(term.name);
    std::vector<CoefficientSummary> summaries =
        model_averaged(fit.trace, names, config.hpd_level);
    summaries.push_back(summarize_draws("sigma2", fit.trace.sigma2, config.hpd_level));
    write_text_file(fs::path(config.out_dir) / "model_averaged.csv",
                    detail::summaries_csv(summaries, header));
    files.push_back("model_averaged.csv");
  }

  // refits: each selected model plus the unfused reference
  SamplerConfig refit_cfg;
  refit_cfg.iterations = config.refit_iterations;
  refit_cfg.burn_in = config.refit_burn_in;
  std::string model_fit_csv = header + "model,columns,d,dic,p_d,bic_mcmc,sigma2_mean\n";
  auto add_refit = [&](const std::string& label, const std::vector<LevelPartition>& parts,
                       std::uint64_t seed) {
    say("refit: " + label);
    const FusedDesign fused = build_fused_design(dm, parts);
    refit_cfg.seed = seed;
    const RefitResult refit = refit_flat(fused, data.response, config.refit_B0, refit_cfg);
    const InformationCriteria ic =
        information_criteria(refit.trace, fused.matrix, data.response);
    model_fit_csv += csv_row({label, std::to_string(fused.matrix.cols()),
                              std::to_string(ic.d), format_double(ic.dic),
                              format_double(ic.p_d), format_double(ic.bic_mcmc),
                              format_double(refit.trace.sigma2.mean())});
    std::vector<CoefficientSummary> summaries =
        model_averaged(refit.trace, fused.column_names, config.hpd_level);
    summaries.push_back(summarize_draws("sigma2", refit.trace.sigma2, config.hpd_level));
    if (label != "full") {
      const std::string name = "refit_" + label + "_coefficients.csv";
      write_text_file(fs::path(config.out_dir) / name,
                      detail::summaries_csv(summaries, header));
      files.push_back(name);
      // expanded to the full dummy layout; fused-away terms are exact zeros
      std::string text = header;
      text += "name,mean\n";
      const Eigen::VectorXd full_mean =
          expand_to_full(fused, refit.trace.beta.colwise().mean());
      for (int c = 0; c < dm.layout.columns(); ++c)
        text += csv_row({dm.layout.terms[c].name, format_double(full_mean[c])});
      const std::string expanded = "refit_" + label + "_expanded.csv";
      write_text_file(fs::path(config.out_dir) / expanded, text);
      files.push_back(expanded);
    }
  };
  {
    std::vector<LevelPartition> identity;
    for (std::size_t j = 0; j < data.categorical.size(); ++j) {
      const auto& cov = data.categorical[j];
      std::vector<int> labels(cov.level_count());
      for (std::size_t e = 0; e < labels.size(); ++e) labels[e] = static_cast<int>(e);
      identity.emplace_back(cov.name, labels);
    }
    add_refit("full", identity, derive_seed(config.sampler.seed, {11}));
  }
  for (std::size_t s = 0; s < strategies.size(); ++s)
    add_refit(strategies[s], selected[strategies[s]],
              derive_seed(config.sampler.seed, {12, s}));
  write_text_file(fs::path(config.out_dir) / "model_fit.csv", model_fit_csv);
  files.push_back("model_fit.csv");

  if (config.dump_trace) {
    std::string text = header;
    std::vector<std::string> names;
    for (const auto& term : dm.layout.terms) names.push_back(term.name);
    text += csv_row(names);
    for (Eigen::Index r = 0; r < fit.trace.draws(); ++r) {
      std::vector<std::string> row;
      for (Eigen::Index c = 0; c < fit.trace.beta.cols(); ++c)
        row.push_back(format_double(fit.trace.beta(r, c), 17));
      text += csv_row(row);
    }
    write_text_file(fs::path(config.out_dir) / "trace_beta.csv", text);
    files.push_back("trace_beta.csv");
    text = header + "sigma2\n";
    for (Eigen::Index r = 0; r < fit.trace.draws(); ++r)
      text += format_double(fit.trace.sigma2[r], 17) + "\n";
    write_text_file(fs::path(config.out_dir) / "trace_sigma2.csv", text);
    files.push_back("trace_sigma2.csv");
    for (std::size_t j = 0; j < data.categorical.size(); ++j) {
      text = header;
      std::vector<std::string> cols;
      for (int k = 1; k < data.categorical[j].level_count(); ++k)
        cols.push_back(data.categorical[j].levels[k]);
      text += csv_row(cols);
      const AllocMatrix& alloc = fit.trace.alloc[j];
      for (Eigen::Index r = 0; r < alloc.rows(); ++r) {
        std::vector<std::string> row;
        for (Eigen::Index k = 0; k < alloc.cols(); ++k)
          row.push_back(std::to_string(alloc(r, k)));
        text += csv_row(row);
      }
      const std::string name = "trace_alloc_" + data.categorical[j].name + ".csv";
      write_text_file(fs::path(config.out_dir) / name, text);
      files.push_back(name);
    }
  }

  // run log: everything needed to reproduce and interpret the run
  cfg::json meta;
  meta["version"] = kVersion;
  meta["seed"] = config.sampler.seed;
  meta["config"] = to_json(config, true);
  meta["data"]["rows_used"] = data.n();
  meta["data"]["dropped_records"] = loaded.dropped_records;
  for (const auto& cov : data.categorical)
    meta["data"]["categorical"].push_back({{"name", cov.name},
                                           {"levels", cov.level_count()},
                                           {"baseline", cov.levels[0]}});
  meta["flat_fit"] = {{"rss", fit.pilot.rss},
                      {"residual_variance", fit.pilot.residual_variance}};
  for (const auto& spec : fit.prior.mixture) {
    cfg::json p = {{"covariate", spec.covariate},
                   {"effects", spec.effect_count},
                   {"components", spec.component_count + 1},
                   {"e0", spec.e0},
                   {"m0", spec.m0},
                   {"M0", spec.M0},
                   {"V", spec.V},
                   {"psi_mode", to_string(spec.psi_mode)},
                   {"psi", spec.psi},
                   {"binary_fallback", spec.binary_fallback},
                   {"degenerate_spread", spec.degenerate_spread}};
    if (spec.psi_mode == PsiMode::Random) {
      p["g0"] = spec.g0;
      p["G0"] = spec.G0;
    }
    meta["prior"].push_back(p);
  }
  meta["outputs"] = files;
  write_text_file(fs::path(config.out_dir) / "run_meta.json", meta.dump(2) + "\n");
  say("wrote " + std::to_string(files.size() + 1) + " files to " + config.out_dir);
}

// Runs the simulation study and writes per-replication records plus
// aggregated tables.
inline void run_simulate(const SimDesign& design, const std::string& out_dir,
                         unsigned threads, const ProgressFn& progress = {}) {
  namespace fs = std::filesystem;
  if (out_dir.empty()) throw ConfigError("output directory must not be empty");
  const StudyResult result = run_study(design, threads, progress);
  fs::create_directories(out_dir);
  const cfg::json design_json = to_json(design);
  const std::string header = detail::repro_header(design.seed, design_json);

  {
    std::string text = header;
    text +=
        "rep,psi_mode,nu,covariate,strategy,groups,ar,err,fpr,fnr,freq,tied,k,"
        "silhouette,one_cluster_suspected\n";
    for (const auto& rec : result.selection) {
      const bool most = rec.strategy == "most";
      text += csv_row({std::to_string(rec.rep), rec.psi_mode, format_double(rec.nu),
                       rec.covariate, rec.strategy, std::to_string(rec.groups),
                       format_double(rec.ar), format_double(rec.err),
                       detail::opt_field(rec.fpr), detail::opt_field(rec.fnr),
                       most ? std::to_string(rec.freq) : "",
                       most ? std::string(rec.tied ? "1" : "0") : "",
                       most ? "" : std::to_string(rec.k),
                       most ? "" : format_double(rec.silhouette),
                       most ? "" : std::string(rec.one_cluster_suspected ? "1" : "0")});
    }
    write_text_file(fs::path(out_dir) / "selection_reps.csv", text);
  }
  {
    std::string text = header;
    text +=
        "psi_mode,nu,covariate,strategy,true_groups,groups,freq,ar,err,fpr,fnr,reps\n";
    for (const auto& cell : design.cells)
      for (const auto& cov : design.covariates)
        for (const char* strategy : {"most", "pam"}) {
          const SelectionSummary s = summarize_selection(
              result, to_string(cell.psi_mode), cell.nu, cov.name, strategy);
          if (s.count == 0) continue;
          text += csv_row({to_string(cell.psi_mode), format_double(cell.nu), cov.name,
                           strategy, std::to_string(true_partition(cov).block_count()),
                           format_double(s.groups), format_double(s.freq),
                           format_double(s.ar), format_double(s.err),
                           detail::opt_field(s.fpr), detail::opt_field(s.fnr),
                           std::to_string(s.count)});
        }
    write_text_file(fs::path(out_dir) / "selection_summary.csv", text);
  }
  {
    std::string text = header;
    text += "rep,psi_mode,nu,estimator,mse,mspe,dic,p_d,bic_mcmc\n";
    for (const auto& rec : result.fits)
      text += csv_row({std::to_string(rec.rep), rec.psi_mode,
                       detail::nan_field(rec.nu), rec.estimator,
                       format_double(rec.mse), format_double(rec.mspe),
                       detail::nan_field(rec.dic), detail::nan_field(rec.p_d),
                       detail::nan_field(rec.bic_mcmc)});
    write_text_file(fs::path(out_dir) / "fit_reps.csv", text);
  }
  {
    std::string text = header;
    text += "psi_mode,nu,estimator,mse,mspe,dic,p_d,bic_mcmc,reps\n";
    for (const char* estimator : {"full", "true"}) {
      const FitSummary s = summarize_fits(result, "", 0.0, estimator);
      if (s.count == 0) continue;
      text += csv_row({"", "", estimator, format_double(s.mse), format_double(s.mspe),
                       format_double(s.dic), format_double(s.p_d),
                       format_double(s.bic_mcmc), std::to_string(s.count)});
    }
    for (const auto& cell : design.cells)
      for (const char* estimator : {"most", "pam", "av"}) {
        const FitSummary s =
            summarize_fits(result, to_string(cell.psi_mode), cell.nu, estimator);
        if (s.count == 0) continue;
        const bool av = std::string(estimator) == "av";
        text += csv_row({to_string(cell.psi_mode), format_double(cell.nu), estimator,
                         format_double(s.mse), format_double(s.mspe),
                         av ? "" : format_double(s.dic), av ? "" : format_double(s.p_d),
                         av ? "" : format_double(s.bic_mcmc), std::to_string(s.count)});
      }
    write_text_file(fs::path(out_dir) / "fit_summary.csv", text);
  }
  {
    cfg::json meta;
    meta["version"] = kVersion;
    meta["seed"] = design.seed;
    meta["design"] = design_json;
    meta["outputs"] = {"selection_reps.csv", "selection_summary.csv", "fit_reps.csv",
                       "fit_summary.csv"};
    write_text_file(fs::path(out_dir) / "study_meta.json", meta.dump(2) + "\n");
  }
}

}  // namespace effectfuse
