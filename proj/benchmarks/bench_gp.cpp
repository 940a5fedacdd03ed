#include <benchmark/benchmark.h>

#include "hazardfield/gp.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/simstudy.hpp"

namespace hf = hazardfield;

namespace {

void BM_FieldConstruction(benchmark::State& state) {
  const hf::CanalNetwork network = hf::paper_geometry_split();
  const hf::PartitionedNetwork partition =
      hf::build_partition(network, hf::paper_grid(static_cast<int>(state.range(0))));
  for (auto _ : state) {
    hf::FieldConstruction cons(network, partition, 0.35);
    benchmark::DoNotOptimize(cons.n_cells());
  }
}
BENCHMARK(BM_FieldConstruction)->Arg(40)->Arg(160);

void BM_FieldFromInnovations(benchmark::State& state) {
  const hf::CanalNetwork network = hf::paper_geometry_split();
  const hf::PartitionedNetwork partition =
      hf::build_partition(network, hf::paper_grid(static_cast<int>(state.range(0))));
  const hf::FieldConstruction cons(network, partition, 0.35);
  hf::RngStream rng(9);
  Eigen::VectorXd eps(cons.n_innovations());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(cons.field_from_innovations(eps));
  }
}
BENCHMARK(BM_FieldFromInnovations)->Arg(40)->Arg(160);

}  // namespace
