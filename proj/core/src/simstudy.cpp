#include "hazardfield/simstudy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <iostream>
#include <numeric>

#include "hazardfield/errors.hpp"
#include "hazardfield/io.hpp"
#include "hazardfield/manifest.hpp"

namespace hazardfield {

namespace fs = std::filesystem;

HouseholdDistribution distribution_from_string(const std::string& name) {
  if (name == "uniform") return HouseholdDistribution::Uniform;
  if (name == "clustered") return HouseholdDistribution::Clustered;
  throw ConfigError("unknown household distribution '" + name + "' (uniform|clustered)");
}

std::string to_string(HouseholdDistribution d) {
  return d == HouseholdDistribution::Uniform ? "uniform" : "clustered";
}

std::string StudyScenario::name() const {
  return "J" + std::to_string(households) + "_I" + std::to_string(obs_per_household) + "_" +
         to_string(distribution) + "_M" + std::to_string(grid_cells);
}

void StudyScenario::validate() const {
  if (households < 1) throw ConfigError("scenario: households must be >= 1");
  if (obs_per_household < 1) throw ConfigError("scenario: obs_per_household must be >= 1");
  if (replications < 1) throw ConfigError("scenario: replications must be >= 1");
  if (grid_cells < 2 || grid_cells % 2 != 0) {
    throw ConfigError("scenario: grid_cells must be an even count >= 2");
  }
  if (population < households) throw ConfigError("scenario: population must be >= households");
}

CanalNetwork paper_geometry() {
  const double h = 8.0 / 3.0;
  std::vector<CanalSegment> segments;
  segments.emplace_back("x1", std::vector<Point>{{0.0, 0.0}, {10.0, 0.0}});
  segments.emplace_back("x2", std::vector<Point>{{0.0, h}, {10.0, h}});
  segments.emplace_back("y", std::vector<Point>{{5.0, 0.0}, {5.0, 4.0}});
  std::vector<IntersectionDecl> intersections{{"x1", 5.0, "y", 0.0}, {"x2", 5.0, "y", h}};
  std::vector<EndpointDecl> endpoints{{"x1", 0.0, EndpointKind::Source},
                                      {"x2", 0.0, EndpointKind::Source},
                                      {"y", 4.0, EndpointKind::Source},
                                      {"x1", 10.0, EndpointKind::Sink},
                                      {"x2", 10.0, EndpointKind::Sink}};
  return CanalNetwork(std::move(segments), std::move(intersections), std::move(endpoints));
}

CanalNetwork paper_geometry_split() {
  const double h = 8.0 / 3.0;
  std::vector<CanalSegment> segments;
  segments.emplace_back("x1", std::vector<Point>{{0.0, 0.0}, {10.0, 0.0}});
  segments.emplace_back("x2", std::vector<Point>{{0.0, h}, {10.0, h}});
  segments.emplace_back("y1", std::vector<Point>{{5.0, 0.0}, {5.0, h}});
  segments.emplace_back("y2", std::vector<Point>{{5.0, h}, {5.0, 4.0}});
  std::vector<IntersectionDecl> intersections{
      {"x1", 5.0, "y1", 0.0}, {"x2", 5.0, "y1", h}, {"x2", 5.0, "y2", 0.0}};
  std::vector<EndpointDecl> endpoints{{"x1", 0.0, EndpointKind::Source},
                                      {"x2", 0.0, EndpointKind::Source},
                                      {"y2", 4.0 - h, EndpointKind::Source},
                                      {"x1", 10.0, EndpointKind::Sink},
                                      {"x2", 10.0, EndpointKind::Sink}};
  return CanalNetwork(std::move(segments), std::move(intersections), std::move(endpoints));
}

std::map<std::string, int> paper_grid(int m) {
  if (m < 2 || m % 2 != 0) throw ConfigError("paper grid needs an even cell count >= 2");
  return {{"x1", m}, {"x2", m}, {"y1", m / 2}, {"y2", m / 2}};
}

std::map<std::string, std::function<double(double)>> true_intensities() {
  const double h = 8.0 / 3.0;
  const auto lam_x1 = [](double c) { return 0.15 + c * c / 100.0; };
  const auto lam_y = [lam_x1](double c) { return lam_x1(5.0) + c * c / 16.0; };
  const auto lam_x2 = [lam_y, h](double c) { return lam_y(h) - 0.25 + c * c / 100.0; };
  return {
      {"x1", lam_x1},
      {"x2", lam_x2},
      {"y", lam_y},
      {"y1", lam_y},
      {"y2", [lam_y, h](double c) { return lam_y(h + c); }},
  };
}

Region paper_region() { return Region{0.0, 0.0, 10.0, 4.0}; }

namespace {

Point sample_location(HouseholdDistribution dist, const CanalNetwork& network,
                      const Region& region, double offset_sd, double total_length,
                      RngStream& rng) {
  if (dist == HouseholdDistribution::Uniform) {
    return Point{rng.uniform(region.x0, region.x1), rng.uniform(region.y0, region.y1)};
  }
  while (true) {
    const double arc = rng.uniform(0.0, total_length);
    double remaining = arc;
    const CanalSegment* seg = &network.segments().back();
    for (const auto& s : network.segments()) {
      if (remaining <= s.length()) {
        seg = &s;
        break;
      }
      remaining -= s.length();
    }
    remaining = std::min(remaining, seg->length());
    const Point base = seg->point_at(remaining);
    const Point tan = seg->tangent_at(remaining);
    const double offset = rng.normal(0.0, offset_sd);
    const Point loc{base.x - offset * tan.y, base.y + offset * tan.x};
    if (region.contains(loc)) return loc;
  }
}

}  // namespace

SurveyDataset sample_households(const StudyScenario& scenario, const CanalNetwork& network,
                                const Region& region, RngStream& rng) {
  scenario.validate();
  const double total_length = network.total_length();
  std::vector<Point> population(static_cast<std::size_t>(scenario.population));
  for (auto& p : population) {
    p = sample_location(scenario.distribution, network, region, scenario.cluster_offset_sd,
                        total_length, rng);
  }
  // Simple random sample without replacement (partial Fisher-Yates).
  std::vector<std::uint32_t> idx(population.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t J = static_cast<std::size_t>(scenario.households);
  for (std::size_t i = 0; i < J; ++i) {
    const std::size_t k = i + static_cast<std::size_t>(rng.uniform_int(idx.size() - i));
    std::swap(idx[i], idx[k]);
  }

  SurveyDataset ds;
  ds.households.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    auto& h = ds.households[j];
    h.id = std::to_string(j + 1);
    h.location = population[idx[j]];
    h.group = 0;
    h.covariates.resize(1);
    h.covariates[0] = rng.normal();
  }
  return ds;
}

std::pair<SurveyDataset, TruthRecord> generate_dataset(
    const StudyScenario& scenario, const CanalNetwork& network,
    const std::map<std::string, std::function<double(double)>>& intensities,
    const Region& region, const TruthParams& params, RngStream& rng) {
  SurveyDataset ds = sample_households(scenario, network, region, rng);
  const std::size_t J = ds.households.size();

  TruthRecord truth;
  truth.params = params;
  truth.true_exposure.resize(static_cast<Eigen::Index>(J));
  const DistanceKernel kernel{params.kernel, params.rho};
  for (std::size_t j = 0; j < J; ++j) {
    truth.true_exposure[static_cast<Eigen::Index>(j)] =
        true_total_exposure(network, intensities, kernel, ds.households[j].location);
  }

  ds.observations.reserve(J * static_cast<std::size_t>(scenario.obs_per_household));
  for (std::size_t j = 0; j < J; ++j) {
    const double rate = std::exp(ds.households[j].covariates[0] * params.gamma) *
                        (params.lambda + truth.true_exposure[static_cast<Eigen::Index>(j)]);
    const double p = infection_prob(rate);
    for (int i = 0; i < scenario.obs_per_household; ++i) {
      ds.observations.push_back({ds.households[j].id, rng.bernoulli(p) ? 1 : 0});
    }
  }
  return {std::move(ds), std::move(truth)};
}

std::vector<PriorPredictiveDraw> prior_predictive(const ModelSpec& spec,
                                                  const CanalNetwork& network,
                                                  const PartitionedNetwork& partition,
                                                  const SurveyDataset& dataset, int n_draws,
                                                  RngStream& rng) {
  spec.validate();
  std::vector<Point> locations;
  locations.reserve(dataset.households.size());
  for (const auto& h : dataset.households) locations.push_back(h.location);
  const ExposureTables tables(partition, locations);

  std::vector<PriorPredictiveDraw> out;
  out.reserve(static_cast<std::size_t>(n_draws));
  for (int d = 0; d < n_draws; ++d) {
    PriorPredictiveDraw draw;
    draw.lambda = std::abs(rng.normal(0.0, spec.lambda_scale));
    draw.rho = std::abs(rng.normal(0.0, spec.rho_scale));
    if (spec.sample_omega) {
      // Gamma(shape, rate) via Marsaglia-Tsang, shape >= 1 in practice here.
      double shape = spec.omega_shape;
      double boost = 1.0;
      if (shape < 1.0) {
        boost = std::pow(rng.uniform(), 1.0 / shape);
        shape += 1.0;
      }
      const double c0 = shape - 1.0 / 3.0;
      const double c1 = 1.0 / std::sqrt(9.0 * c0);
      double v = 0.0;
      while (true) {
        const double x = rng.normal();
        v = 1.0 + c1 * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.uniform();
        if (u > 0.0 && std::log(u) < 0.5 * x * x + c0 - c0 * v + c0 * std::log(v)) break;
      }
      draw.omega = boost * c0 * v / spec.omega_rate;
    } else {
      draw.omega = spec.omega;
    }
    // A drawn omega outside the factorizable range is redrawn; the prior
    // predictive is effectively truncated to constructible lengthscales.
    std::unique_ptr<FieldConstruction> construction;
    for (int attempt = 0; !construction; ++attempt) {
      try {
        construction = std::make_unique<FieldConstruction>(network, partition, draw.omega);
      } catch (const NumericalError&) {
        if (!spec.sample_omega || attempt >= 100) throw;
        draw.omega *= 0.5;
      }
    }
    const LatentField field = construction->sample_prior(rng);
    const Eigen::VectorXd z = construction->flatten(field);
    const DistanceKernel kernel{spec.kernel, std::max(draw.rho, 1e-12)};
    draw.p.resize(static_cast<Eigen::Index>(dataset.households.size()));
    for (std::size_t j = 0; j < dataset.households.size(); ++j) {
      const double theta = discretized_exposure(z, kernel, tables, j);
      const double xg = dataset.households[j].covariates.size() > 0
                            ? dataset.households[j].covariates[0] * 0.0
                            : 0.0;  // prior predictive at the covariate reference
      draw.p[static_cast<Eigen::Index>(j)] = infection_prob(std::exp(xg) * (draw.lambda + theta));
    }
    draw.mean_infection_prob = draw.p.mean();
    out.push_back(std::move(draw));
  }
  return out;
}

ReplicationResult summarize_replication(const FitReport& report,
                                        const std::vector<ChainOutput>& chains,
                                        const PartitionedNetwork& partition,
                                        std::size_t n_households) {
  ReplicationResult rep;
  auto scalar = [&](const std::string& name) {
    const auto& p = report.parameter(name);
    return ReplicationResult::Scalar{p.mean, p.q10, p.q90};
  };
  rep.lambda = scalar("lambda");
  rep.rho = scalar("rho");
  rep.gamma = scalar("gamma.1");
  rep.theta.reserve(n_households);
  for (const auto& p : report.parameters) {
    if (p.name.rfind("theta.", 0) == 0) {
      rep.theta.push_back({p.mean, p.q10, p.q90});
    }
    if (p.rhat && std::isfinite(*p.rhat)) rep.max_rhat = std::max(rep.max_rhat, *p.rhat);
  }
  if (rep.theta.size() != n_households) {
    throw ConfigError("fit report does not match the dataset's household count");
  }
  rep.divergences = report.divergences;

  // Posterior mean of exp(z) per cell, straight from the draws.
  const auto& names = chains.front().names;
  for (const auto& part : partition.partitions()) {
    Eigen::VectorXd mean_expz(static_cast<Eigen::Index>(part.cells.size()));
    for (std::size_t m = 0; m < part.cells.size(); ++m) {
      const std::string name = "z." + part.segment_id + "." + std::to_string(m + 1);
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw ConfigError("draws missing '" + name + "'");
      const Eigen::Index col = it - names.begin();
      double acc = 0.0;
      long count = 0;
      for (const auto& chain : chains) {
        acc += chain.draws.col(col).array().exp().sum();
        count += chain.draws.rows();
      }
      mean_expz[static_cast<Eigen::Index>(m)] = acc / static_cast<double>(count);
    }
    rep.exp_z_mean[part.segment_id] = std::move(mean_expz);
  }
  return rep;
}

namespace {

struct CoverageAccumulator {
  std::vector<double> values;
  void add(double truth, double q10, double q90, bool* defined) {
    if (q90 - q10 <= 0.0) {
      *defined = false;
      return;
    }
    *defined = true;
    values.push_back((truth > q10 && truth < q90) ? 1.0 : 0.0);
  }
};

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

EstimateRow make_row(const std::string& name, const std::vector<double>& bias,
                     const std::vector<double>& sq, const std::vector<double>& cover,
                     bool any_defined) {
  EstimateRow row;
  row.estimand = name;
  row.bias = mean_of(bias);
  row.mse = mean_of(sq);
  row.se_bias = se_of(bias);
  row.se_mse = se_of(sq);
  if (any_defined && !cover.empty()) {
    row.coverage = mean_of(cover);
    row.se_coverage = se_of(cover);
  }
  return row;
}

}  // namespace

ScenarioEstimates estimators(const std::vector<ReplicationResult>& fits,
                             const std::vector<TruthRecord>& truths,
                             const PartitionedNetwork& partition,
                             const std::map<std::string, std::function<double(double)>>& intensities) {
  if (fits.size() != truths.size() || fits.empty()) {
    throw ConfigError("estimators: fits and truths must align");
  }
  ScenarioEstimates out;

  struct ScalarPick {
    std::string name;
    ReplicationResult::Scalar ReplicationResult::* member;
    double TruthParams::* truth;
  };
  const std::vector<ScalarPick> scalars = {
      {"lambda", &ReplicationResult::lambda, &TruthParams::lambda},
      {"rho", &ReplicationResult::rho, &TruthParams::rho},
      {"gamma", &ReplicationResult::gamma, &TruthParams::gamma},
  };
  for (const auto& pick : scalars) {
    std::vector<double> bias, sq, cover;
    bool any_defined = false;
    for (std::size_t s = 0; s < fits.size(); ++s) {
      const auto& est = fits[s].*(pick.member);
      const double truth = truths[s].params.*(pick.truth);
      const double b = est.mean - truth;
      bias.push_back(b);
      sq.push_back(b * b);
      bool defined = false;
      CoverageAccumulator acc;
      acc.add(truth, est.q10, est.q90, &defined);
      if (defined) {
        any_defined = true;
        cover.push_back(acc.values.front());
      }
    }
    out.rows.push_back(make_row(pick.name, bias, sq, cover, any_defined));
  }

  // Household exposures: per replication, average over households.
  {
    std::vector<double> bias, sq, cover;
    bool any_defined = false;
    for (std::size_t s = 0; s < fits.size(); ++s) {
      const auto& fit = fits[s];
      const auto& truth = truths[s].true_exposure;
      if (static_cast<std::size_t>(truth.size()) != fit.theta.size()) {
        throw ConfigError("estimators: household counts do not match the truth record");
      }
      double b_acc = 0.0, sq_acc = 0.0, cover_acc = 0.0;
      long covered_n = 0;
      for (std::size_t j = 0; j < fit.theta.size(); ++j) {
        const double b = fit.theta[j].mean - truth[static_cast<Eigen::Index>(j)];
        b_acc += b;
        sq_acc += b * b;
        if (fit.theta[j].q90 - fit.theta[j].q10 > 0.0) {
          cover_acc += (truth[static_cast<Eigen::Index>(j)] > fit.theta[j].q10 &&
                        truth[static_cast<Eigen::Index>(j)] < fit.theta[j].q90)
                           ? 1.0
                           : 0.0;
          ++covered_n;
        }
      }
      const double J = static_cast<double>(fit.theta.size());
      bias.push_back(b_acc / J);
      sq.push_back(sq_acc / J);
      if (covered_n > 0) {
        any_defined = true;
        cover.push_back(cover_acc / static_cast<double>(covered_n));
      }
    }
    out.rows.push_back(make_row("theta", bias, sq, cover, any_defined));
  }

  // IMAE per segment: cell-sum approximation of the integrated absolute error.
  for (const auto& part : partition.partitions()) {
    const auto it = intensities.find(part.segment_id);
    if (it == intensities.end()) continue;
    std::vector<double> imae_s;
    for (const auto& fit : fits) {
      const auto expz = fit.exp_z_mean.find(part.segment_id);
      if (expz == fit.exp_z_mean.end()) {
        throw ConfigError("estimators: missing exp(z) means for segment '" + part.segment_id + "'");
      }
      double acc = 0.0;
      for (std::size_t m = 0; m < part.cells.size(); ++m) {
        acc += part.cells[m].width *
               std::abs(expz->second[static_cast<Eigen::Index>(m)] -
                        it->second(part.cells[m].centroid_arc));
      }
      imae_s.push_back(acc);
    }
    out.imae[part.segment_id] = {mean_of(imae_s), se_of(imae_s)};
  }
  return out;
}

namespace {

void save_truth(const fs::path& path, const SurveyDataset& ds, const TruthRecord& truth) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t j = 0; j < ds.households.size(); ++j) {
    rows.push_back({ds.households[j].id,
                    format_double(truth.true_exposure[static_cast<Eigen::Index>(j)])});
  }
  write_csv(path, {"household_id", "true_exposure"}, rows);
}

TruthRecord load_truth(const fs::path& path, const TruthParams& params) {
  const CsvTable tab = read_csv(path);
  const std::size_t c_e = tab.column("true_exposure");
  TruthRecord truth;
  truth.params = params;
  truth.true_exposure.resize(static_cast<Eigen::Index>(tab.rows.size()));
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    truth.true_exposure[static_cast<Eigen::Index>(r)] = std::stod(tab.rows[r][c_e]);
  }
  return truth;
}

void save_replication_summary(const fs::path& path, const ReplicationResult& rep,
                              const PartitionedNetwork& partition) {
  std::vector<std::vector<std::string>> rows;
  auto scalar_row = [&](const std::string& name, const ReplicationResult::Scalar& s) {
    rows.push_back({name, format_double(s.mean), format_double(s.q10), format_double(s.q90)});
  };
  scalar_row("lambda", rep.lambda);
  scalar_row("rho", rep.rho);
  scalar_row("gamma", rep.gamma);
  for (std::size_t j = 0; j < rep.theta.size(); ++j) {
    scalar_row("theta." + std::to_string(j + 1), rep.theta[j]);
  }
  for (const auto& part : partition.partitions()) {
    const auto& expz = rep.exp_z_mean.at(part.segment_id);
    for (Eigen::Index m = 0; m < expz.size(); ++m) {
      rows.push_back({"expz." + part.segment_id + "." + std::to_string(m + 1),
                      format_double(expz[m]), "0", "0"});
    }
  }
  rows.push_back({"_max_rhat", format_double(rep.max_rhat), "0", "0"});
  rows.push_back({"_divergences", std::to_string(rep.divergences), "0", "0"});
  rows.push_back({"_flagged", rep.rhat_flagged ? "1" : "0", "0", "0"});
  write_csv(path, {"name", "mean", "q10", "q90"}, rows);
}

ReplicationResult load_replication_summary(const fs::path& path,
                                           const PartitionedNetwork& partition) {
  const CsvTable tab = read_csv(path);
  const std::size_t c_name = tab.column("name");
  const std::size_t c_mean = tab.column("mean");
  const std::size_t c_q10 = tab.column("q10");
  const std::size_t c_q90 = tab.column("q90");
  ReplicationResult rep;
  std::map<std::string, std::vector<double>> expz;
  for (const auto& row : tab.rows) {
    const std::string& name = row[c_name];
    const ReplicationResult::Scalar s{std::stod(row[c_mean]), std::stod(row[c_q10]),
                                      std::stod(row[c_q90])};
    if (name == "lambda") {
      rep.lambda = s;
    } else if (name == "rho") {
      rep.rho = s;
    } else if (name == "gamma") {
      rep.gamma = s;
    } else if (name.rfind("theta.", 0) == 0) {
      rep.theta.push_back(s);
    } else if (name.rfind("expz.", 0) == 0) {
      const auto second_dot = name.find('.', 5);
      expz[name.substr(5, second_dot - 5)].push_back(s.mean);
    } else if (name == "_max_rhat") {
      rep.max_rhat = s.mean;
    } else if (name == "_divergences") {
      rep.divergences = static_cast<int>(s.mean);
    } else if (name == "_flagged") {
      rep.rhat_flagged = s.mean > 0.5;
    }
  }
  for (const auto& part : partition.partitions()) {
    const auto it = expz.find(part.segment_id);
    if (it == expz.end() || it->second.size() != part.cells.size()) {
      throw IoError("replication summary missing exp(z) for segment '" + part.segment_id + "'");
    }
    rep.exp_z_mean[part.segment_id] =
        Eigen::Map<const Eigen::VectorXd>(it->second.data(),
                                          static_cast<Eigen::Index>(it->second.size()));
  }
  return rep;
}

}  // namespace

std::vector<StudyCellOutcome> run_study(const StudyOptions& options) {
  const CanalNetwork network = paper_geometry_split();
  const auto intensities = true_intensities();
  const Region region = paper_region();

  std::vector<StudyCellOutcome> outcomes;
  std::size_t cell_index = 0;
  for (const int j : options.j_list) {
    for (const int i : options.i_list) {
      for (const auto dist : options.distributions) {
        for (const int m : options.m_list) {
          StudyScenario scenario;
          scenario.households = j;
          scenario.obs_per_household = i;
          scenario.distribution = dist;
          scenario.grid_cells = m;
          scenario.replications = options.replications;
          scenario.seed = options.seed;
          scenario.population = options.population;
          scenario.cluster_offset_sd = options.cluster_offset_sd;
          scenario.validate();

          StudyCellOutcome outcome;
          outcome.scenario = scenario.name();
          if (options.dry_run) {
            outcomes.push_back(std::move(outcome));
            ++cell_index;
            continue;
          }

          const PartitionedNetwork partition = build_partition(network, paper_grid(m));
          const fs::path cell_dir = options.out_dir / scenario.name();
          std::vector<ReplicationResult> fits;
          std::vector<TruthRecord> truths;
          for (int s = 0; s < scenario.replications; ++s) {
            const fs::path rep_dir = cell_dir / ("rep_" + std::to_string(s + 1));
            try {
              if (manifest_marks_complete(rep_dir) &&
                  fs::exists(rep_dir / "rep_summary.csv")) {
                fits.push_back(load_replication_summary(rep_dir / "rep_summary.csv", partition));
                truths.push_back(load_truth(rep_dir / "truth.csv", options.truth));
                ++outcome.completed;
                continue;
              }
              RngStream rep_rng =
                  RngStream::keyed(options.seed, cell_index * 1000003ULL +
                                                     static_cast<std::uint64_t>(s));
              const std::uint64_t fit_seed = rep_rng.raw();
              auto [dataset, truth] = generate_dataset(scenario, network, intensities, region,
                                                       options.truth, rep_rng);

              Posterior posterior(network, partition, dataset, options.model);
              SamplerConfig sampler = options.sampler;
              sampler.seed = fit_seed;
              const auto chains = run_chains(
                  [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
                    return posterior.log_posterior(u, grad);
                  },
                  posterior.dim(),
                  [&](const Eigen::VectorXd& u) { return posterior.constrained_draw(u); },
                  posterior.parameter_names(), sampler);

              const FitReport report = summarize(chains, sampler.max_tree_depth);
              ReplicationResult rep =
                  summarize_replication(report, chains, partition, dataset.households.size());
              rep.rhat_flagged = rep.max_rhat > options.rhat_flag_threshold;

              fs::create_directories(rep_dir);
              save_dataset(rep_dir, dataset);
              save_truth(rep_dir / "truth.csv", dataset, truth);
              save_fit_report(rep_dir / "fit_report.csv", report);
              save_replication_summary(rep_dir / "rep_summary.csv", rep, partition);
              if (options.write_draws) {
                for (std::size_t c = 0; c < chains.size(); ++c) {
                  save_draws(rep_dir / ("draws_chain" + std::to_string(c + 1) + ".csv"),
                             chains[c], static_cast<int>(c + 1));
                }
              }
              RunManifest manifest;
              manifest.command = "study-replication";
              manifest.seed = options.seed;
              manifest.outputs = {"rep_summary.csv", "truth.csv", "fit_report.csv"};
              write_manifest(rep_dir, manifest);

              fits.push_back(std::move(rep));
              truths.push_back(std::move(truth));
              ++outcome.completed;
            } catch (const std::exception& e) {
              ++outcome.failed;
              fs::create_directories(rep_dir);
              std::ofstream fail(rep_dir / "failed.txt", std::ios::trunc);
              fail << e.what() << "\n";
            }
          }

          if (!fits.empty()) {
            outcome.estimates = estimators(fits, truths, partition, intensities);
            std::vector<std::vector<std::string>> rows;
            for (const auto& row : outcome.estimates.rows) {
              rows.push_back({scenario.name(), row.estimand, format_double(row.bias),
                              format_double(row.mse),
                              row.coverage ? format_double(*row.coverage) : "NA",
                              format_double(row.se_bias), format_double(row.se_mse),
                              format_double(row.se_coverage)});
            }
            write_csv(cell_dir / "estimates.csv",
                      {"scenario", "estimand", "bias", "mse", "coverage", "se_bias", "se_mse",
                       "se_coverage"},
                      rows);
            std::vector<std::vector<std::string>> imae_rows;
            for (const auto& [segment, stats] : outcome.estimates.imae) {
              imae_rows.push_back({scenario.name(), segment, format_double(stats.first),
                                   format_double(stats.second)});
            }
            write_csv(cell_dir / "imae.csv", {"scenario", "segment", "imae", "se_imae"},
                      imae_rows);
          }
          outcomes.push_back(std::move(outcome));
          ++cell_index;
        }
      }
    }
  }
  return outcomes;
}

}  // namespace hazardfield
