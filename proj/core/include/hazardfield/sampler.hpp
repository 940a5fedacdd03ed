#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hazardfield/rng.hpp"

namespace hazardfield {

/// Log density with gradient on the unconstrained scale. Returns -inf outside
/// the support; the gradient output may be left untouched in that case.
using LogDensityGradient =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

/// Maps an unconstrained state to the constrained-scale reported draw.
using DrawReporter = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SamplerConfig {
  int chains = 4;
  int warmup_iters = 2000;
  int sampling_iters = 2000;
  double target_accept = 0.95;
  int max_tree_depth = 10;
  double divergence_threshold = 1000.0;  // nats
  std::uint64_t seed = 0;
  int threads = 1;
  double init_radius = 2.0;  // uniform(-r, r) unconstrained initialization
  int init_retries = 100;

  void validate() const;
};

struct ChainOutput {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;  // sampling_iters x names, constrained scale
  std::vector<std::uint8_t> divergent;
  std::vector<int> treedepth;
  std::vector<double> accept_stat;
  std::vector<double> stepsize;

  int divergence_count() const;
  int max_depth_hits(int max_depth) const;
};

/// One velocity-Verlet step under a diagonal metric. Returns false when the
/// gradient or density is non-finite mid-step (a divergence signal); q and p
/// are left at the failed position in that case.
bool leapfrog(const LogDensityGradient& logp, Eigen::VectorXd& q, Eigen::VectorXd& p,
              double step, const Eigen::VectorXd& inv_mass);

struct NutsStats {
  bool divergent = false;
  int depth = 0;
  int n_leapfrog = 0;
  double accept_stat = 0.0;
  double energy = 0.0;
};

/// One multinomial no-U-turn transition with the generalized U-turn
/// criterion. Divergence is declared when the Hamiltonian error exceeds the
/// threshold; it is data, not an error.
NutsStats nuts_transition(const LogDensityGradient& logp, Eigen::VectorXd& q, double step,
                          const Eigen::VectorXd& inv_mass, RngStream& rng,
                          int max_tree_depth, double divergence_threshold);

struct AdaptResult {
  double step = 0.0;
  Eigen::VectorXd inv_mass;
  Eigen::VectorXd state;
  int warmup_divergences = 0;
};

/// Dual-averaging step-size adaptation toward target_accept with expanding
/// memoryless variance windows (75 initial / doubling windows / 50 final)
/// for the diagonal mass matrix.
AdaptResult adapt(const LogDensityGradient& logp, const Eigen::VectorXd& init,
                  const SamplerConfig& config, RngStream& rng);

/// Runs config.chains independently seeded chains (streams keyed by
/// (seed, chain index)) and reports constrained draws.
std::vector<ChainOutput> run_chains(const LogDensityGradient& logp, std::size_t dim,
                                    const DrawReporter& report,
                                    const std::vector<std::string>& names,
                                    const SamplerConfig& config);

}  // namespace hazardfield
