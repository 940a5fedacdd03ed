#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "hazardfield/commands.hpp"
#include "hazardfield/config.hpp"
#include "hazardfield/errors.hpp"
#include "hazardfield/version.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string seed;
  std::string threads;
  std::string out;
  bool dry_run = false;
  std::string data_dir;
  std::string draws;
  std::string geometry;
};

void add_common(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value config file");
  cmd->add_option("--seed", args.seed, "random seed (unsigned 64-bit)");
  cmd->add_option("--threads", args.threads,
                  "worker threads (HAZARDFIELD_THREADS is the fallback)");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_flag("--dry-run", args.dry_run, "resolve and print the plan without executing");
  cmd->add_option("--geometry", args.geometry,
                  "paper | paper_split | directory with geometry CSVs");
}

hazardfield::Config build_config(const GlobalArgs& args) {
  hazardfield::Config cfg;
  if (!args.config_path.empty()) {
    cfg = hazardfield::Config::from_file(args.config_path);
    cfg.set("config", args.config_path);
  }
  if (!args.seed.empty()) cfg.set("seed", args.seed);
  if (!args.threads.empty()) cfg.set("threads", args.threads);
  if (!args.out.empty()) cfg.set("out", args.out);
  if (args.dry_run) cfg.set("dry_run", "true");
  if (!args.geometry.empty()) cfg.set("geometry", args.geometry);
  if (!args.data_dir.empty()) {
    cfg.set("data.households", args.data_dir + "/households.csv");
    cfg.set("data.observations", args.data_dir + "/observations.csv");
  }
  if (!args.draws.empty()) cfg.set("draws", args.draws);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hazardfield: cumulative exposure to extensive environmental hazards"};
  app.set_version_flag("--version", hazardfield::kVersion);
  app.require_subcommand(1);

  GlobalArgs args;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic survey dataset");
  CLI::App* fit = app.add_subcommand("fit", "run full Bayesian inference on a dataset");
  CLI::App* diagnose = app.add_subcommand("diagnose", "convergence diagnostics for saved draws");
  CLI::App* validate = app.add_subcommand("validate", "discretization-error diagnostics");
  CLI::App* study = app.add_subcommand("study", "replicated simulation study");
  CLI::App* functional = app.add_subcommand("functional", "change-in-odds along a ray");
  for (CLI::App* cmd : {simulate, fit, diagnose, validate, study, functional}) {
    add_common(cmd, args);
  }
  fit->add_option("--data", args.data_dir, "directory with households.csv and observations.csv");
  diagnose->add_option("--draws", args.draws, "draws CSV or directory of draws_chain*.csv");
  functional->add_option("--draws", args.draws, "draws CSV or directory of draws_chain*.csv");
  functional->add_option("--chains", args.draws, "alias of --draws")->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    const hazardfield::Config cfg = build_config(args);
    for (CLI::App* cmd : {simulate, fit, diagnose, validate, study, functional}) {
      if (cmd->parsed()) {
        return hazardfield::cli::run_command(cmd->get_name(), cfg, std::cout, std::cerr);
      }
    }
  } catch (const hazardfield::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return hazardfield::cli::kExitValidation;
  } catch (const hazardfield::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return hazardfield::cli::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return hazardfield::cli::kExitRuntime;
  }
  return hazardfield::cli::kExitValidation;
}
