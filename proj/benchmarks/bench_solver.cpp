#include <benchmark/benchmark.h>

#include "covloc/bench.hpp"
#include "covloc/config.hpp"
#include "covloc/crb.hpp"
#include "covloc/dictionary.hpp"
#include "covloc/solver.hpp"

namespace {

using namespace covloc;

struct Fixture {
  ExperimentSpec spec;
  Scenario scenario;
  SnapshotBlock block;
  CovarianceMeasurement meas;
  ArrayModel model;

  explicit Fixture(const char* config) {
    spec = load_config(std::string(COVLOC_CONFIG_DIR) + "/" + config).experiment;
    scenario = spec.base_scenario.instantiate(1);
    block = synthesize(scenario);
    meas = measure(scenario, block);
    model = {scenario.trajectory, scenario.propagation};
  }
};

const Fixture& fig5_fixture() {
  static const Fixture f("fig5_snr.json");
  return f;
}

void BM_Synthesize(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(synthesize(f.scenario));
}
BENCHMARK(BM_Synthesize)->Unit(benchmark::kMillisecond);

void BM_BuildDictionary(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  GridSpec grid = f.spec.solver.grid;
  grid.spacing = static_cast<double>(state.range(0));
  const CandidateSet candidates(grid.points());
  for (auto _ : state) benchmark::DoNotOptimize(build(f.model.trajectory, candidates, f.model.propagation));
  state.counters["atoms"] = static_cast<double>(candidates.size());
}
BENCHMARK(BM_BuildDictionary)->Arg(500)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_PositionGradient(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  const CandidateSet s(f.scenario.emitter_positions());
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(3, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(position_gradient(f.model, s, f.meas.stacked, b, 30.0, 0));
}
BENCHMARK(BM_PositionGradient)->Unit(benchmark::kMillisecond);

void BM_SolveOffGrid(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(solve_off_grid(f.meas, f.model, f.spec.solver));
}
BENCHMARK(BM_SolveOffGrid)->Unit(benchmark::kMillisecond);

void BM_SolveOnGrid(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  GridSpec grid = f.spec.solver.grid;
  grid.spacing = static_cast<double>(state.range(0));
  const CandidateSet candidates(grid.points());
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_on_grid(f.meas, f.model, candidates, f.spec.on_grid, grid.spacing));
  }
  state.counters["atoms"] = static_cast<double>(candidates.size());
}
BENCHMARK(BM_SolveOnGrid)->Arg(100)->Arg(25)->Unit(benchmark::kMillisecond);

void BM_Crb(benchmark::State& state) {
  const Fixture& f = fig5_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(compute_crb(f.scenario, f.block.emitter_signals));
}
BENCHMARK(BM_Crb)->Unit(benchmark::kMillisecond);

void BM_OracleCheck(benchmark::State& state) {
  OracleCheckSpec spec;
  spec.instances = 10;
  for (auto _ : state) benchmark::DoNotOptimize(run_oracle_check(spec));
}
BENCHMARK(BM_OracleCheck)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
