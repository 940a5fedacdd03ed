#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "hazardfield/sampler.hpp"

namespace hazardfield {

/// Quantile by linear interpolation of order statistics; the same rule is
/// used by summaries and coverage computations.
double quantile(std::vector<double> draws, double p);

/// Inverse standard normal CDF (Acklam's rational approximation).
double inverse_normal_cdf(double p);

/// Rank-normalized split R-hat. Empty when every split sequence has zero
/// within variance (the diagnostic is undefined, not NaN).
std::optional<double> split_rhat_rank_normalized(const std::vector<Eigen::VectorXd>& chains);

/// Bulk ESS on rank-normalized split chains, with Geyer initial-monotone
/// paired autocorrelation sums and the log10 cap.
std::optional<double> ess_bulk(const std::vector<Eigen::VectorXd>& chains);

/// Tail ESS: minimum ESS of the 5% and 95% quantile indicator draws.
std::optional<double> ess_tail(const std::vector<Eigen::VectorXd>& chains);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q01 = 0.0, q10 = 0.0, q50 = 0.0, q90 = 0.0, q99 = 0.0;
  std::optional<double> rhat;
  std::optional<double> ess_bulk;
  std::optional<double> ess_tail;
};

struct FitReport {
  std::vector<ParameterSummary> parameters;
  int divergences = 0;
  int max_depth_hits = 0;

  const ParameterSummary& parameter(const std::string& name) const;
};

FitReport summarize(const std::vector<ChainOutput>& chains, int max_tree_depth = 10);

}  // namespace hazardfield
