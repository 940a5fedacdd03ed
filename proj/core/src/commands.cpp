#include "hazardfield/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <ostream>

#include "hazardfield/diagnostics.hpp"
#include "hazardfield/errors.hpp"
#include "hazardfield/exposure.hpp"
#include "hazardfield/io.hpp"
#include "hazardfield/manifest.hpp"
#include "hazardfield/model.hpp"
#include "hazardfield/sampler.hpp"
#include "hazardfield/simstudy.hpp"

namespace hazardfield::cli {

namespace fs = std::filesystem;

namespace {

std::uint64_t resolve_seed(const Config& cfg) { return cfg.get_u64("seed", 0); }

int resolve_threads(const Config& cfg) {
  if (cfg.has("threads")) return cfg.get_int("threads", 1);
  if (const char* env = std::getenv("HAZARDFIELD_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("HAZARDFIELD_THREADS is not an integer");
    }
  }
  return cfg.get_int("threads", 1);
}

fs::path resolve_out(const Config& cfg) { return cfg.get_string("out", "out"); }

CanalNetwork resolve_network(const Config& cfg) {
  const std::string geometry = cfg.get_string("geometry", "paper_split");
  if (geometry == "paper") return paper_geometry();
  if (geometry == "paper_split") return paper_geometry_split();
  return load_network(geometry);
}

bool geometry_is_builtin(const Config& cfg) {
  const std::string geometry = cfg.get_string("geometry", "paper_split");
  return geometry == "paper" || geometry == "paper_split";
}

PartitionedNetwork resolve_partition(const Config& cfg, const CanalNetwork& network) {
  if (geometry_is_builtin(cfg) && cfg.get_string("geometry", "paper_split") == "paper_split") {
    return build_partition(network, paper_grid(cfg.get_int("grid.m", 40)));
  }
  std::map<std::string, int> counts;
  const int uniform_m = cfg.get_int("grid.m", 40);
  for (const auto& seg : network.segments()) {
    counts[seg.id()] = cfg.get_int("cells." + seg.id(), uniform_m);
  }
  return build_partition(network, counts);
}

ModelSpec resolve_model_spec(const Config& cfg) {
  ModelSpec spec;
  spec.kernel = kernel_kind_from_string(cfg.get_string("kernel", "exponential"));
  spec.lambda_scale = cfg.get_double("prior.lambda_scale", 0.3);
  spec.gamma_scale = cfg.get_double("prior.gamma_scale", 0.3);
  spec.rho_scale = cfg.get_double("prior.rho_scale", 0.5);
  spec.sample_omega = cfg.get_bool("gp.sample_omega", false);
  spec.omega = cfg.get_double("gp.omega", 0.35);
  spec.omega_shape = cfg.get_double("gp.omega_shape", 4.0);
  spec.omega_rate = cfg.get_double("gp.omega_rate", 1.0);
  spec.group_baselines = cfg.get_bool("model.group_baselines", false);
  spec.validate();
  return spec;
}

SamplerConfig resolve_sampler(const Config& cfg) {
  SamplerConfig sampler;
  sampler.chains = cfg.get_int("sampler.chains", 4);
  sampler.warmup_iters = cfg.get_int("sampler.warmup", 2000);
  sampler.sampling_iters = cfg.get_int("sampler.samples", 2000);
  sampler.target_accept = cfg.get_double("sampler.target_accept", 0.95);
  sampler.max_tree_depth = cfg.get_int("sampler.max_treedepth", 10);
  sampler.divergence_threshold = cfg.get_double("sampler.divergence_threshold", 1000.0);
  sampler.seed = resolve_seed(cfg);
  sampler.threads = resolve_threads(cfg);
  sampler.validate();
  return sampler;
}

TruthParams resolve_truth(const Config& cfg) {
  TruthParams truth;
  truth.lambda = cfg.get_double("truth.lambda", 0.05);
  truth.rho = cfg.get_double("truth.rho", 0.1);
  truth.gamma = cfg.get_double("truth.gamma", -0.15);
  truth.kernel = kernel_kind_from_string(cfg.get_string("truth.kernel", "exponential"));
  return truth;
}

RunManifest start_manifest(const std::string& command, const Config& cfg,
                           const std::vector<fs::path>& inputs) {
  RunManifest manifest;
  manifest.command = command;
  manifest.config_path = cfg.get_string("config", "");
  manifest.seed = resolve_seed(cfg);
  for (const auto& path : inputs) {
    if (fs::exists(path) && fs::is_regular_file(path)) {
      char buf[20];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(fnv1a64_file(path)));
      manifest.input_digests[path.string()] = buf;
    }
  }
  return manifest;
}

void finish_manifest(RunManifest manifest, const Config& cfg, const fs::path& out_dir,
                     std::vector<std::string> outputs) {
  manifest.resolved_config = cfg.resolved();
  manifest.outputs = std::move(outputs);
  write_manifest(out_dir, manifest);
}

}  // namespace

int cmd_simulate(const Config& cfg, std::ostream& log) {
  const fs::path out_dir = resolve_out(cfg);
  std::vector<fs::path> inputs;
  if (cfg.has("config")) inputs.emplace_back(cfg.get_string("config", ""));
  RunManifest manifest = start_manifest("simulate", cfg, inputs);

  StudyScenario scenario;
  scenario.households = cfg.get_int("sim.j", 100);
  scenario.obs_per_household = cfg.get_int("sim.i", 10);
  scenario.distribution = distribution_from_string(cfg.get_string("sim.distribution", "clustered"));
  scenario.grid_cells = cfg.get_int("grid.m", 40);
  scenario.replications = 1;
  scenario.seed = resolve_seed(cfg);
  scenario.population = cfg.get_int("sim.population", 200000);
  scenario.cluster_offset_sd = cfg.get_double("sim.cluster_sd", 0.25);
  scenario.validate();

  const TruthParams truth_params = resolve_truth(cfg);
  const CanalNetwork network = paper_geometry_split();
  const auto intensities = true_intensities();
  if (cfg.get_bool("dry_run", false)) {
    log << "simulate (dry run): " << scenario.name() << "\n";
    return kExitOk;
  }

  RngStream rng = RngStream::keyed(scenario.seed, 0);
  const auto [dataset, truth] =
      generate_dataset(scenario, network, intensities, paper_region(), truth_params, rng);

  save_dataset(out_dir, dataset);
  std::vector<std::vector<std::string>> truth_rows;
  for (std::size_t j = 0; j < dataset.households.size(); ++j) {
    truth_rows.push_back({dataset.households[j].id,
                          format_double(truth.true_exposure[static_cast<Eigen::Index>(j)])});
  }
  write_csv(out_dir / "truth.csv", {"household_id", "true_exposure"}, truth_rows);

  std::vector<std::string> outputs = {"households.csv", "observations.csv", "truth.csv"};
  const int prior_draws = cfg.get_int("sim.prior_predictive", 0);
  if (prior_draws > 0) {
    const PartitionedNetwork partition = resolve_partition(cfg, network);
    const ModelSpec spec = resolve_model_spec(cfg);
    RngStream prior_rng = RngStream::keyed(scenario.seed, 1);
    const auto draws = prior_predictive(spec, network, partition, dataset, prior_draws, prior_rng);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      rows.push_back({std::to_string(d + 1), format_double(draws[d].lambda),
                      format_double(draws[d].rho), format_double(draws[d].omega),
                      format_double(draws[d].mean_infection_prob)});
    }
    write_csv(out_dir / "prior_pred.csv", {"draw", "lambda", "rho", "omega", "mean_p"}, rows);
    outputs.push_back("prior_pred.csv");
  }
  finish_manifest(std::move(manifest), cfg, out_dir, std::move(outputs));
  log << "simulate: wrote " << dataset.households.size() << " households, "
      << dataset.observations.size() << " observations to " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_fit(const Config& cfg, std::ostream& log) {
  const fs::path out_dir = resolve_out(cfg);
  if (!cfg.has("data.households") || !cfg.has("data.observations")) {
    throw ConfigError("fit requires data.households and data.observations");
  }
  const fs::path households = cfg.get_string("data.households", "");
  const fs::path observations = cfg.get_string("data.observations", "");
  std::vector<fs::path> inputs{households, observations};
  if (cfg.has("config")) inputs.emplace_back(cfg.get_string("config", ""));
  RunManifest manifest = start_manifest("fit", cfg, inputs);

  const SurveyDataset dataset = load_dataset(households, observations);
  const CanalNetwork network = resolve_network(cfg);
  const PartitionedNetwork partition = resolve_partition(cfg, network);
  const ModelSpec spec = resolve_model_spec(cfg);
  const SamplerConfig sampler = resolve_sampler(cfg);
  if (cfg.get_bool("dry_run", false)) {
    log << "fit (dry run): " << dataset.households.size() << " households, grid cells "
        << partition.total_cells() << "\n";
    return kExitOk;
  }

  Posterior posterior(network, partition, dataset, spec);
  const auto chains = run_chains(
      [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
        return posterior.log_posterior(u, grad);
      },
      posterior.dim(),
      [&](const Eigen::VectorXd& u) { return posterior.constrained_draw(u); },
      posterior.parameter_names(), sampler);

  std::vector<std::string> outputs;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const std::string name = "draws_chain" + std::to_string(c + 1) + ".csv";
    save_draws(out_dir / name, chains[c], static_cast<int>(c + 1));
    outputs.push_back(name);
  }
  const FitReport report = summarize(chains, sampler.max_tree_depth);
  save_fit_report(out_dir / "fit_report.csv", report);
  outputs.push_back("fit_report.csv");
  finish_manifest(std::move(manifest), cfg, out_dir, std::move(outputs));
  log << "fit: " << chains.size() << " chains, " << report.divergences << " divergences, "
      << "outputs in " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_diagnose(const Config& cfg, std::ostream& log) {
  if (!cfg.has("draws")) throw ConfigError("diagnose requires draws=<file-or-dir>");
  const fs::path out_dir = resolve_out(cfg);
  const auto paths = resolve_draws_paths(cfg.get_string("draws", ""));
  RunManifest manifest = start_manifest("diagnose", cfg, paths);
  const auto chains = load_draws(paths);
  const FitReport report = summarize(chains, cfg.get_int("sampler.max_treedepth", 10));
  save_fit_report(out_dir / "fit_report.csv", report);
  finish_manifest(std::move(manifest), cfg, out_dir, {"fit_report.csv"});
  log << "diagnose: " << report.parameters.size() << " parameters, " << report.divergences
      << " divergences\n";
  return kExitOk;
}

int cmd_validate(const Config& cfg, std::ostream& log) {
  const fs::path out_dir = resolve_out(cfg);
  std::vector<fs::path> inputs;
  if (cfg.has("config")) inputs.emplace_back(cfg.get_string("config", ""));
  RunManifest manifest = start_manifest("validate", cfg, inputs);

  const CanalNetwork network = paper_geometry_split();
  const auto intensities = true_intensities();
  const std::vector<int> ladder = cfg.get_int_list("validate.m_ladder", {20, 40, 80, 160, 320});
  const double rho = cfg.get_double("validate.rho", 0.1);
  const int subsamples = cfg.get_int("validate.subsamples", 10);
  const DistanceKernel kernel{KernelKind::Exponential, rho};

  // Fixed near-canal probe households for the refinement ladder.
  const std::vector<Point> probes = {{4.3, 0.05}, {6.1, 0.22}, {5.21, 1.4},
                                     {2.4, 2.8},  {7.7, 2.47}, {5.05, 3.6}};

  std::vector<std::vector<std::string>> rows;
  std::vector<double> mean_errors;
  for (const int m : ladder) {
    const PartitionedNetwork partition = build_partition(network, paper_grid(m));
    std::vector<Point> probe_list = probes;
    const ExposureTables tables(partition, probe_list);
    LatentField field;
    for (const auto& part : partition.partitions()) {
      Eigen::VectorXd z(static_cast<Eigen::Index>(part.cells.size()));
      const auto& lam = intensities.at(part.segment_id);
      for (std::size_t i = 0; i < part.cells.size(); ++i) {
        z[static_cast<Eigen::Index>(i)] = std::log(lam(part.cells[i].centroid_arc));
      }
      field.z.push_back(std::move(z));
    }
    field.source_values.resize(0);
    field.node_values.resize(0);

    double err_acc = 0.0;
    for (std::size_t j = 0; j < probes.size(); ++j) {
      const double approx = discretized_exposure(field, kernel, tables, j);
      const double exact = true_total_exposure(network, intensities, kernel, probes[j]);
      const double err = std::abs(approx - exact);
      const double bound =
          discretization_error_bound(field, kernel, partition, probes[j], subsamples);
      err_acc += err;
      rows.push_back({std::to_string(m), std::to_string(j + 1), format_double(err),
                      format_double(bound), ""});
    }
    mean_errors.push_back(err_acc / static_cast<double>(probes.size()));
  }

  // Log-log regression of the mean error on the ladder.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const double x = std::log(static_cast<double>(ladder[i]));
    const double y = std::log(std::max(mean_errors[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(ladder.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  for (auto& row : rows) row[4] = format_double(slope);
  write_csv(out_dir / "validate.csv", {"m", "household", "abs_error", "bound", "slope"}, rows);

  // Bound-dominance spot check on random configurations at a fixed grid.
  const int n_configs = cfg.get_int("validate.random_configs", 100);
  RngStream rng = RngStream::keyed(resolve_seed(cfg), 17);
  const PartitionedNetwork partition = build_partition(network, paper_grid(40));
  int violations = 0;
  std::vector<std::vector<std::string>> brows;
  for (int c = 0; c < n_configs; ++c) {
    const Point hh{rng.uniform(0.0, 10.0), rng.uniform(0.0, 4.0)};
    const DistanceKernel k{KernelKind::Exponential, rng.uniform(0.05, 0.5)};
    const double a0 = rng.uniform(-0.5, 0.5);
    const double a1 = rng.uniform(-0.3, 0.3);
    const double a2 = rng.uniform(-0.3, 0.3);
    const auto smooth = [&](double arc) {
      return a0 + a1 * arc / 10.0 + a2 * std::sin(arc / 2.0);
    };
    LatentField field;
    std::map<std::string, std::function<double(double)>> lam;
    for (const auto& part : partition.partitions()) {
      Eigen::VectorXd z(static_cast<Eigen::Index>(part.cells.size()));
      for (std::size_t i = 0; i < part.cells.size(); ++i) {
        z[static_cast<Eigen::Index>(i)] = smooth(part.cells[i].centroid_arc);
      }
      field.z.push_back(std::move(z));
      lam[part.segment_id] = [smooth](double arc) { return std::exp(smooth(arc)); };
    }
    std::vector<Point> one{hh};
    const ExposureTables tables(partition, one);
    const double approx = discretized_exposure(field, k, tables, 0);
    const double exact = true_total_exposure(network, lam, k, hh);
    const double err = std::abs(approx - exact);
    const double bound = discretization_error_bound(field, k, partition, hh, subsamples);
    if (bound < err) ++violations;
    brows.push_back({std::to_string(c + 1), format_double(err), format_double(bound)});
  }
  write_csv(out_dir / "validate_bound.csv", {"config", "abs_error", "bound"}, brows);

  finish_manifest(std::move(manifest), cfg, out_dir, {"validate.csv", "validate_bound.csv"});
  log << "validate: slope " << slope << ", bound violations " << violations << "/" << n_configs
      << "\n";
  if (violations > 0) return kExitRuntime;
  return kExitOk;
}

int cmd_study(const Config& cfg, std::ostream& log) {
  StudyOptions options;
  options.j_list = cfg.get_int_list("study.j", {100});
  options.i_list = cfg.get_int_list("study.i", {10});
  options.m_list = cfg.get_int_list("study.m", {20, 40});
  options.distributions.clear();
  for (const auto& name : cfg.get_string_list("study.distributions", {"clustered"})) {
    options.distributions.push_back(distribution_from_string(name));
  }
  options.replications = cfg.get_int("study.reps", 5);
  options.seed = resolve_seed(cfg);
  options.population = cfg.get_int("sim.population", 200000);
  options.cluster_offset_sd = cfg.get_double("sim.cluster_sd", 0.25);
  options.truth = resolve_truth(cfg);
  options.model = resolve_model_spec(cfg);
  options.sampler = resolve_sampler(cfg);
  options.out_dir = resolve_out(cfg);
  options.write_draws = cfg.get_bool("study.write_draws", true);
  options.dry_run = cfg.get_bool("dry_run", false);

  std::vector<fs::path> inputs;
  if (cfg.has("config")) inputs.emplace_back(cfg.get_string("config", ""));
  RunManifest manifest = start_manifest("study", cfg, inputs);

  const auto outcomes = run_study(options);
  if (options.dry_run) {
    log << "study (dry run), scenario grid:\n";
    for (const auto& o : outcomes) log << "  " << o.scenario << "\n";
    return kExitOk;
  }
  std::vector<std::string> outputs;
  for (const auto& o : outcomes) {
    log << "study: " << o.scenario << " completed " << o.completed << " failed " << o.failed
        << "\n";
    outputs.push_back(o.scenario + "/estimates.csv");
  }
  finish_manifest(std::move(manifest), cfg, options.out_dir, std::move(outputs));
  return kExitOk;
}

int cmd_functional(const Config& cfg, std::ostream& log) {
  if (!cfg.has("draws")) throw ConfigError("functional requires draws=<file-or-dir>");
  const fs::path out_dir = resolve_out(cfg);
  const auto paths = resolve_draws_paths(cfg.get_string("draws", ""));
  RunManifest manifest = start_manifest("functional", cfg, paths);

  const CanalNetwork network = resolve_network(cfg);
  const PartitionedNetwork partition = resolve_partition(cfg, network);
  const KernelKind kernel = kernel_kind_from_string(cfg.get_string("kernel", "exponential"));

  const double dmin = cfg.get_double("functional.min_km", 0.01);
  const double dmax = cfg.get_double("functional.max_km", 1.0);
  const int steps = cfg.get_int("functional.steps", 25);
  const double ox = cfg.get_double("functional.origin_x", 0.0);
  const double oy = cfg.get_double("functional.origin_y", 0.0);
  double dx = cfg.get_double("functional.dir_x", 0.0);
  double dy = cfg.get_double("functional.dir_y", 1.0);
  const double norm = std::hypot(dx, dy);
  if (norm <= 0.0) throw ConfigError("functional direction must be nonzero");
  dx /= norm;
  dy /= norm;
  if (steps < 1 || dmax < dmin) throw ConfigError("functional grid is empty");

  const auto chains = load_draws(paths);
  Eigen::Index total_rows = 0;
  for (const auto& c : chains) total_rows += c.draws.rows();
  Eigen::MatrixXd pooled(total_rows, chains.front().draws.cols());
  Eigen::Index at = 0;
  for (const auto& c : chains) {
    pooled.middleRows(at, c.draws.rows()) = c.draws;
    at += c.draws.rows();
  }

  const Point s1{ox + dmin * dx, oy + dmin * dy};
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < steps; ++i) {
    const double d = (steps == 1) ? dmin : dmin + (dmax - dmin) * i / (steps - 1);
    const Point s2{ox + d * dx, oy + d * dy};
    const auto values =
        change_in_odds(pooled, chains.front().names, partition, kernel, s1, s2);
    std::vector<double> copy = values;
    const double mean = std::accumulate(copy.begin(), copy.end(), 0.0) /
                        static_cast<double>(copy.size());
    rows.push_back({format_double(d), format_double(mean), format_double(quantile(copy, 0.10)),
                    format_double(quantile(copy, 0.90))});
  }
  write_csv(out_dir / "functional.csv", {"distance_km", "mean", "q10", "q90"}, rows);
  finish_manifest(std::move(manifest), cfg, out_dir, {"functional.csv"});
  log << "functional: " << rows.size() << " distances written\n";
  return kExitOk;
}

int run_command(const std::string& name, const Config& config, std::ostream& log,
                std::ostream& err) {
  try {
    if (name == "simulate") return cmd_simulate(config, log);
    if (name == "fit") return cmd_fit(config, log);
    if (name == "diagnose") return cmd_diagnose(config, log);
    if (name == "validate") return cmd_validate(config, log);
    if (name == "study") return cmd_study(config, log);
    if (name == "functional") return cmd_functional(config, log);
    err << "unknown command '" << name << "'\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const QuadratureError& e) {
    err << "runtime error: " << e.what() << " (estimate " << e.estimate << ", bound "
        << e.error_bound << ")\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace hazardfield::cli
