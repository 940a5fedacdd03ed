#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hazardfield/diagnostics.hpp"
#include "hazardfield/exposure.hpp"
#include "hazardfield/geometry.hpp"
#include "hazardfield/model.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/sampler.hpp"

namespace hazardfield {

enum class HouseholdDistribution { Uniform, Clustered };

HouseholdDistribution distribution_from_string(const std::string& name);
std::string to_string(HouseholdDistribution d);

struct Region {
  double x0 = 0.0, y0 = 0.0, x1 = 10.0, y1 = 4.0;
  bool contains(const Point& p) const {
    return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
  }
};

struct StudyScenario {
  int households = 100;        // J
  int obs_per_household = 10;  // I
  HouseholdDistribution distribution = HouseholdDistribution::Clustered;
  int grid_cells = 40;         // M
  int replications = 5;        // S
  std::uint64_t seed = 0;
  double cluster_offset_sd = 0.25;  // km, lateral Normal offset for the clustered law
  int population = 200000;          // locations simulated before the simple random sample

  std::string name() const;
  void validate() const;
};

struct TruthParams {
  double lambda = 0.05;
  double rho = 0.1;
  double gamma = -0.15;
  KernelKind kernel = KernelKind::Exponential;
};

struct TruthRecord {
  Eigen::VectorXd true_exposure;  // quadrature E_j per household
  TruthParams params;
};

/// The three-segment canal system: x1 along the bottom edge, y vertical
/// through the middle, x2 horizontal at height 8/3 km.
CanalNetwork paper_geometry();

/// Same curves with y split at the x2 crossing into y1 (lower, 8/3 km) and
/// y2 (upper, 4/3 km), realizing the split grid with equi-width cells per
/// sub-segment.
CanalNetwork paper_geometry_split();

/// Cell counts for the split geometry at resolution M: x1 and x2 get M cells,
/// y1 and y2 get M/2 each.
std::map<std::string, int> paper_grid(int m);

/// True per-segment intensities, keyed by segment id for both the plain and
/// the split geometry.
std::map<std::string, std::function<double(double)>> true_intensities();

Region paper_region();

/// Household locations and covariates: a population of `population` points
/// (uniform over the region, or clustered around the network with a lateral
/// normal offset and in-region rejection), then a simple random sample of J.
/// Covariates are iid standard normal.
SurveyDataset sample_households(const StudyScenario& scenario, const CanalNetwork& network,
                                const Region& region, RngStream& rng);

/// Households plus I Bernoulli outcomes per household with
/// p_j = 1 - exp(-exp(X_j gamma) (lambda + E_j)), E_j by quadrature.
std::pair<SurveyDataset, TruthRecord> generate_dataset(
    const StudyScenario& scenario, const CanalNetwork& network,
    const std::map<std::string, std::function<double(double)>>& intensities,
    const Region& region, const TruthParams& params, RngStream& rng);

struct PriorPredictiveDraw {
  double lambda = 0.0;
  double rho = 0.0;
  double omega = 0.0;
  double mean_infection_prob = 0.0;
  Eigen::VectorXd p;  // per household
};

/// Parameter and field draws from the priors pushed through the infection
/// probability, for prior sanity reports.
std::vector<PriorPredictiveDraw> prior_predictive(const ModelSpec& spec,
                                                  const CanalNetwork& network,
                                                  const PartitionedNetwork& partition,
                                                  const SurveyDataset& dataset, int n_draws,
                                                  RngStream& rng);

/// Posterior summaries of one replication's fit, as the estimators need them.
struct ReplicationResult {
  struct Scalar {
    double mean = 0.0, q10 = 0.0, q90 = 0.0;
  };
  Scalar lambda, rho, gamma;
  std::vector<Scalar> theta;                           // per household
  std::map<std::string, Eigen::VectorXd> exp_z_mean;   // per segment
  double max_rhat = 0.0;
  int divergences = 0;
  bool rhat_flagged = false;
};

struct EstimateRow {
  std::string estimand;
  double bias = 0.0, mse = 0.0;
  std::optional<double> coverage;  // empty when every interval was degenerate
  double se_bias = 0.0, se_mse = 0.0, se_coverage = 0.0;
};

struct ScenarioEstimates {
  std::vector<EstimateRow> rows;
  std::map<std::string, std::pair<double, double>> imae;  // segment -> (mean, se)
};

/// Bias, MSE and equi-tailed 80% coverage over replications for lambda, rho,
/// gamma and the household exposures, plus per-segment IMAE of the intensity.
ScenarioEstimates estimators(const std::vector<ReplicationResult>& fits,
                             const std::vector<TruthRecord>& truths,
                             const PartitionedNetwork& partition,
                             const std::map<std::string, std::function<double(double)>>& intensities);

/// Summarizes one fit into the estimator inputs.
ReplicationResult summarize_replication(const FitReport& report,
                                        const std::vector<ChainOutput>& chains,
                                        const PartitionedNetwork& partition,
                                        std::size_t n_households);

struct StudyOptions {
  std::vector<int> j_list{100};
  std::vector<int> i_list{10};
  std::vector<int> m_list{20, 40};
  std::vector<HouseholdDistribution> distributions{HouseholdDistribution::Clustered};
  int replications = 5;
  std::uint64_t seed = 0;
  int population = 200000;
  double cluster_offset_sd = 0.25;
  TruthParams truth;
  ModelSpec model;
  SamplerConfig sampler;
  std::filesystem::path out_dir;
  bool write_draws = true;
  bool dry_run = false;
  double rhat_flag_threshold = 1.01;
};

struct StudyCellOutcome {
  std::string scenario;
  ScenarioEstimates estimates;
  int completed = 0;
  int failed = 0;
};

/// Generate -> fit -> diagnose -> estimate over the scenario grid, with
/// manifest-based resume of completed replications. Per-replication failures
/// are recorded and the study continues.
std::vector<StudyCellOutcome> run_study(const StudyOptions& options);

}  // namespace hazardfield
