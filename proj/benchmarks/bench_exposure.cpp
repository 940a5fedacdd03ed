#include <benchmark/benchmark.h>

#include "hazardfield/exposure.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/simstudy.hpp"

namespace hf = hazardfield;

namespace {

struct Fixture {
  hf::CanalNetwork network = hf::paper_geometry_split();
  hf::PartitionedNetwork partition;
  std::vector<hf::Point> households;
  hf::ExposureTables tables;
  hf::LatentField field;

  explicit Fixture(int m, int j)
      : partition(hf::build_partition(network, hf::paper_grid(m))),
        households(make_households(j)),
        tables(partition, households) {
    hf::RngStream rng(7);
    const hf::FieldConstruction cons(network, partition, 0.35);
    field = cons.sample_prior(rng);
  }

  static std::vector<hf::Point> make_households(int j) {
    hf::RngStream rng(11);
    std::vector<hf::Point> out(static_cast<std::size_t>(j));
    for (auto& p : out) p = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 4.0)};
    return out;
  }
};

void BM_DiscretizedExposure(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)), 200);
  const hf::DistanceKernel kernel{hf::KernelKind::Exponential, 0.1};
  const Eigen::VectorXd z = hf::flatten_field(fx.field);
  std::size_t j = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(hf::discretized_exposure(z, kernel, fx.tables, j));
    j = (j + 1) % fx.households.size();
  }
}
BENCHMARK(BM_DiscretizedExposure)->Arg(40)->Arg(160);

void BM_QuadratureExposure(benchmark::State& state) {
  Fixture fx(40, 8);
  const hf::DistanceKernel kernel{hf::KernelKind::Exponential, 0.1};
  const auto intensities = hf::true_intensities();
  std::size_t j = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        hf::true_total_exposure(fx.network, intensities, kernel, fx.households[j]));
    j = (j + 1) % fx.households.size();
  }
}
BENCHMARK(BM_QuadratureExposure);

void BM_ErrorBound(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)), 8);
  const hf::DistanceKernel kernel{hf::KernelKind::Exponential, 0.1};
  std::size_t j = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        hf::discretization_error_bound(fx.field, kernel, fx.partition, fx.households[j], 10));
    j = (j + 1) % fx.households.size();
  }
}
BENCHMARK(BM_ErrorBound)->Arg(40)->Arg(160);

}  // namespace
