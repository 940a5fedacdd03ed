#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hazardfield/exposure.hpp"
#include "hazardfield/geometry.hpp"
#include "hazardfield/gp.hpp"

namespace hazardfield {

struct Household {
  std::string id;
  Point location;
  Eigen::VectorXd covariates;
  int group = 0;
};

struct Observation {
  std::string household_id;
  int outcome = 0;  // 0 or 1
};

struct SurveyDataset {
  std::vector<Household> households;
  std::vector<Observation> observations;

  std::size_t household_index(const std::string& id) const;
  void validate() const;
};

struct ModelSpec {
  KernelKind kernel = KernelKind::Exponential;
  double lambda_scale = 0.3;  // Normal+(0, s) prior for lambda_b
  double gamma_scale = 0.3;   // Normal(0, s) prior for gamma
  double rho_scale = 0.5;     // Normal+(0, s) prior for rho
  bool sample_omega = false;
  double omega = 0.35;        // fixed GP lengthscale when sample_omega is false
  double omega_shape = 4.0;   // Gamma(shape, rate) prior when sampled
  double omega_rate = 1.0;
  bool group_baselines = false;  // exp(beta_local[k]) instead of shared lambda_b

  void validate() const;
};

/// P(infected) = 1 - exp(-rate), computed stably.
double infection_prob(double rate);

/// log(1 - exp(-eta)) for eta > 0, stable over the full range.
double log1m_exp_neg(double eta);

/// Deterministic pairwise tree reduction; the result does not depend on how
/// the summands were produced, so data-parallel callers stay reproducible.
double pairwise_tree_sum(const double* data, std::size_t n);

/// The joint model bound to a dataset and a discretization grid.
///
/// Unconstrained state layout:
///   [ log lambda_b | beta_local[0..G) ] , log rho, gamma[0..p),
///   ( log omega if sampled ), field innovations (sources, nodes, cells).
class Posterior {
 public:
  Posterior(const CanalNetwork& network, const PartitionedNetwork& partition,
            const SurveyDataset& dataset, const ModelSpec& spec);

  std::size_t dim() const { return dim_; }
  const ModelSpec& spec() const { return spec_; }
  const ExposureTables& tables() const { return *tables_; }
  const FieldConstruction& construction() const { return *construction_; }
  std::size_t n_groups() const { return group_ids_.size(); }

  double log_likelihood(const Eigen::VectorXd& u, Eigen::VectorXd* grad = nullptr) const;
  double log_prior(const Eigen::VectorXd& u, Eigen::VectorXd* grad = nullptr) const;
  double log_posterior(const Eigen::VectorXd& u, Eigen::VectorXd* grad = nullptr) const;

  /// eta_j = exp(gamma'x_j) (lambda_b + theta_j) for one household.
  double per_obs_rate(const Eigen::VectorXd& u, std::size_t household) const;

  /// Names of the constrained-scale reported parameters, stable across chains.
  const std::vector<std::string>& parameter_names() const { return names_; }

  /// Constrained-scale report of a state, aligned with parameter_names():
  /// baselines, rho, gamma, (omega), cell values, source and node values,
  /// and per-household theta.
  Eigen::VectorXd constrained_draw(const Eigen::VectorXd& u) const;

 private:
  struct Unpacked {
    double lambda_b = 0.0;
    Eigen::VectorXd beta_local;
    double rho = 0.0;
    Eigen::VectorXd gamma;
    double omega = 0.0;
    Eigen::VectorXd eps;
  };
  Unpacked unpack(const Eigen::VectorXd& u) const;
  const FieldConstruction& construction_for(double omega,
                                            std::unique_ptr<FieldConstruction>& holder) const;

  const CanalNetwork* network_;
  const PartitionedNetwork* partition_;
  ModelSpec spec_;
  std::unique_ptr<ExposureTables> tables_;
  std::unique_ptr<FieldConstruction> construction_;  // fixed-omega factors

  Eigen::MatrixXd covariates_;  // J x p
  Eigen::VectorXd n_infected_;  // per household
  Eigen::VectorXd n_clear_;
  std::vector<int> group_of_;     // household -> group slot
  std::vector<int> group_ids_;    // slot -> declared group id
  std::size_t p_ = 0;             // covariate dimension
  std::size_t dim_ = 0;
  std::size_t base_dim_ = 0;      // baseline block size (1 or G)
  std::size_t omega_slot_ = 0;    // index of log omega when sampled
  std::size_t eps_offset_ = 0;
  std::vector<std::string> names_;
};

/// Per-draw change in odds between locations s1 and s2:
///   (exp(-(lambda + theta(s2))) - 1) / (exp(-(lambda + theta(s1))) - 1) - 1
/// computed from raw draws (requires "lambda", "rho" and the cell values).
std::vector<double> change_in_odds(const Eigen::MatrixXd& draws,
                                   const std::vector<std::string>& names,
                                   const PartitionedNetwork& partition, KernelKind kernel,
                                   const Point& s1, const Point& s2);

/// log of the minimum household-to-network distance, for export to external
/// baseline fits. Errors on a zero distance (apply a distance floor upstream).
Eigen::VectorXd min_distance_predictor(const CanalNetwork& network,
                                       const SurveyDataset& dataset);

}  // namespace hazardfield
