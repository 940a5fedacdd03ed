#include <benchmark/benchmark.h>

#include "hazardfield/model.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/simstudy.hpp"

namespace hf = hazardfield;

namespace {

struct Fit {
  hf::CanalNetwork network = hf::paper_geometry_split();
  hf::PartitionedNetwork partition;
  hf::SurveyDataset dataset;
  hf::ModelSpec spec;
  hf::Posterior posterior;

  Fit(int m, int j, bool sample_omega)
      : partition(hf::build_partition(network, hf::paper_grid(m))),
        dataset(make_dataset(network, j)),
        spec(make_spec(sample_omega)),
        posterior(network, partition, dataset, spec) {}

  static hf::SurveyDataset make_dataset(const hf::CanalNetwork& network, int j) {
    hf::StudyScenario scenario;
    scenario.households = j;
    scenario.obs_per_household = 10;
    scenario.population = 4 * j;
    scenario.seed = 3;
    hf::RngStream rng(3);
    auto [ds, truth] = hf::generate_dataset(scenario, network, hf::true_intensities(),
                                            hf::paper_region(), hf::TruthParams{}, rng);
    return ds;
  }

  static hf::ModelSpec make_spec(bool sample_omega) {
    hf::ModelSpec spec;
    spec.sample_omega = sample_omega;
    return spec;
  }
};

void BM_LogPosteriorGradient(benchmark::State& state) {
  Fit fit(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), false);
  hf::RngStream rng(5);
  Eigen::VectorXd u(fit.posterior.dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = 0.1 * rng.normal();
  Eigen::VectorXd grad(u.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit.posterior.log_posterior(u, &grad));
  }
}
BENCHMARK(BM_LogPosteriorGradient)->Args({40, 200})->Args({160, 200})->Args({40, 1000});

void BM_LogPosteriorGradientSampledOmega(benchmark::State& state) {
  Fit fit(40, 200, true);
  hf::RngStream rng(5);
  Eigen::VectorXd u(fit.posterior.dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = 0.1 * rng.normal();
  u[3] = std::log(0.4);  // keep omega in the well-conditioned range
  Eigen::VectorXd grad(u.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit.posterior.log_posterior(u, &grad));
  }
}
BENCHMARK(BM_LogPosteriorGradientSampledOmega);

}  // namespace
