// Serial reference loops against the OpenMP kernels. Arg 0 runs serial,
// arg 1 parallel.

#include <benchmark/benchmark.h>

#include "cascade/router.hpp"
#include "cascade/simulator.hpp"

using namespace cascade;

namespace {

ExecOptions exec_for(const benchmark::State& state) { return ExecOptions{state.range(0) != 0, 0}; }

const World& world() {
    static const World w = generate_world(preset_world("table3like", 7));
    return w;
}

void BM_GenerateWorld(benchmark::State& state) {
    const auto cfg = preset_world("table3like", 7);
    for (auto _ : state) benchmark::DoNotOptimize(generate_world(cfg, exec_for(state)));
}

void BM_EvaluateBackend(benchmark::State& state) {
    const auto reg = world().registry();
    for (auto _ : state) benchmark::DoNotOptimize(evaluate_backend(reg.get("lm"), world().bundle, kTest, exec_for(state)));
}

void BM_RouteDataset(benchmark::State& state) {
    const auto reg = world().registry();
    const auto plan = build_plan(reg, world().bundle, kVal, 0.8);
    RouteOptions opts;
    opts.exec = exec_for(state);
    for (auto _ : state) benchmark::DoNotOptimize(route_dataset(plan, reg, world().bundle, kTest, std::nullopt, opts));
}

void BM_Calibrate(benchmark::State& state) {
    const auto reg = world().registry();
    const auto plan = build_plan(reg, world().bundle, kVal, 0.8);
    const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    for (auto _ : state) {
        benchmark::DoNotOptimize(calibrate_thresholds(plan, reg, world().bundle, grid, 0.35, kVal, exec_for(state)));
    }
}

}  // namespace

BENCHMARK(BM_GenerateWorld)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateBackend)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RouteDataset)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Calibrate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
