// Apache License, Version 2.0, refer to LICENSE.txt

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "effectfuse/pipeline.hpp"

namespace {

using effectfuse::cfg::json;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw effectfuse::ConfigError("cannot open config file '" + path + "'");
  json root;
  try {
    root = json::parse(in, nullptr, true, true);  // allow comments
  } catch (const json::parse_error& e) {
    throw effectfuse::ConfigError("config file '" + path + "': " + e.what());
  }
  return root;
}

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> burnin;
  std::string out;
  bool quiet = false;
};

effectfuse::ProgressFn progress(const CommonFlags& flags) {
  if (flags.quiet) return {};
  return [](const std::string& msg) { std::cerr << "[effectfuse] " << msg << "\n"; };
}

int run_fit_command(const std::string& config_path, const CommonFlags& flags,
                    const std::optional<double>& nu, const std::string& psi_mode,
                    const std::string& strategy, bool dump_trace) {
  json root = read_json_file(config_path);
  if (flags.seed) root["sampler"]["seed"] = *flags.seed;
  if (flags.iterations) root["sampler"]["iterations"] = *flags.iterations;
  if (flags.burnin) root["sampler"]["burn_in"] = *flags.burnin;
  if (nu) root["prior"]["nu"] = *nu;
  if (!psi_mode.empty()) root["prior"]["psi_mode"] = psi_mode;
  if (!strategy.empty()) root["selection"]["strategy"] = strategy;
  if (dump_trace) root["output"]["dump_trace"] = true;
  if (!flags.out.empty()) root["output"]["dir"] = flags.out;
  const effectfuse::FitConfig config = effectfuse::fit_config_from_json(root);
  effectfuse::run_fit(config, progress(flags));
  return 0;
}

int run_simulate_command(const std::string& config_path, const CommonFlags& flags,
                         bool desk_scale, const std::vector<double>& nu_list,
                         const std::vector<std::string>& psi_modes,
                         std::optional<int> replications, unsigned threads) {
  effectfuse::SimDesign design =
      desk_scale ? effectfuse::desk_scale_design() : effectfuse::default_design();
  if (!config_path.empty())
    design = effectfuse::sim_design_from_json(read_json_file(config_path), design);
  if (!nu_list.empty() || !psi_modes.empty()) {
    std::vector<effectfuse::PsiMode> modes;
    for (const std::string& mode : psi_modes)
      modes.push_back(effectfuse::cfg::parse_psi_mode(mode));
    if (modes.empty()) modes = {effectfuse::PsiMode::Fixed, effectfuse::PsiMode::Random};
    std::vector<double> grid = nu_list;
    if (grid.empty())
      for (const auto& cell : design.cells)
        if (std::find(grid.begin(), grid.end(), cell.nu) == grid.end())
          grid.push_back(cell.nu);
    design.cells = effectfuse::make_cells(modes, grid);
  }
  if (flags.seed) design.seed = *flags.seed;
  if (flags.iterations) design.iterations = *flags.iterations;
  if (flags.burnin) design.burn_in = *flags.burnin;
  if (replications) design.replications = *replications;
  effectfuse::validate(design);
  const std::string out_dir = flags.out.empty() ? "effectfuse_study" : flags.out;
  effectfuse::run_simulate(design, out_dir, threads, progress(flags));
  return 0;
}

int fail(const char* type, const std::string& message, int code) {
  json err;
  err["error"] = {{"type", type}, {"message", message}};
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian effect fusion for categorical predictors"};
  app.set_version_flag("--version", std::string(effectfuse::kVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string config_path;
  std::string psi_mode, strategy;
  std::optional<double> nu_single;
  bool dump_trace = false;

  CLI::App* fit = app.add_subcommand("fit", "fit the fusion model to a CSV dataset");
  fit->add_option("--config", config_path, "JSON config file")->required();
  fit->add_option("--seed", flags.seed, "sampler seed");
  fit->add_option("--iterations", flags.iterations, "recorded sweeps");
  fit->add_option("--burnin", flags.burnin, "burn-in sweeps");
  fit->add_option("--nu", nu_single, "prior shrink factor nu");
  fit->add_option("--psi-mode", psi_mode, "fixed or random")
      ->check(CLI::IsMember({"fixed", "random"}));
  fit->add_option("--strategy", strategy, "partition selection: most, pam or both")
      ->check(CLI::IsMember({"most", "pam", "both"}));
  fit->add_option("--out", flags.out, "output directory");
  fit->add_flag("--dump-trace", dump_trace, "write raw posterior draws");
  fit->add_flag("--quiet", flags.quiet, "suppress progress output");

  bool desk_scale = false;
  std::vector<double> nu_list;
  std::vector<std::string> psi_modes;
  std::optional<int> replications;
  unsigned threads = effectfuse::thread_count();

  CLI::App* sim = app.add_subcommand("simulate", "run the simulation study");
  sim->add_option("--config", config_path, "JSON study design (optional)");
  sim->add_flag("--desk-scale", desk_scale, "reduced-size study defaults");
  sim->add_option("--seed", flags.seed, "study master seed");
  sim->add_option("--iterations", flags.iterations, "recorded sweeps per fit");
  sim->add_option("--burnin", flags.burnin, "burn-in sweeps per fit");
  sim->add_option("--nu", nu_list, "nu grid (repeatable)");
  sim->add_option("--psi-mode", psi_modes, "restrict to fixed and/or random")
      ->check(CLI::IsMember({"fixed", "random"}));
  sim->add_option("--reps", replications, "number of replications");
  sim->add_option("--threads", threads, "worker threads (0 = all cores)");
  sim->add_option("--out", flags.out, "output directory");
  sim->add_flag("--quiet", flags.quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed())
      return run_fit_command(config_path, flags, nu_single, psi_mode, strategy,
                             dump_trace);
    return run_simulate_command(config_path, flags, desk_scale, nu_list, psi_modes,
                                replications, threads);
  } catch (const effectfuse::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const effectfuse::DataError& e) {
    return fail("data", e.what(), 2);
  } catch (const effectfuse::NumericalError& e) {
    return fail("numerical", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
