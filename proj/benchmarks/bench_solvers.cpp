#include <benchmark/benchmark.h>

#include "ddcw/diagnostics.hpp"

namespace {

ddcw::ModelSpec model_of_size(int n_states) {
    ddcw::RandomModelConfig cfg;
    cfg.n_states = n_states;
    cfg.n_actions = 2;
    cfg.seed = 99;
    return ddcw::make_random_model(cfg);
}

void BM_SolveValueEmax(benchmark::State& state) {
    const ddcw::ModelSpec model = model_of_size(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        auto v = ddcw::solve_value_emax(model);
        benchmark::DoNotOptimize(v.v.data());
    }
}
BENCHMARK(BM_SolveValueEmax)->Arg(20)->Arg(100)->Arg(400);

void BM_SolveValueCcpDirect(benchmark::State& state) {
    const ddcw::ModelSpec model = model_of_size(static_cast<int>(state.range(0)));
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    for (auto _ : state) {
        auto v = ddcw::solve_value_ccp(solved.ccp, model.kernel, model.utility.u, model.beta);
        benchmark::DoNotOptimize(v.v.data());
    }
}
BENCHMARK(BM_SolveValueCcpDirect)->Arg(20)->Arg(100)->Arg(400);

void BM_SolveValueCcpNeumann(benchmark::State& state) {
    const ddcw::ModelSpec model = model_of_size(static_cast<int>(state.range(0)));
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    for (auto _ : state) {
        auto v = ddcw::solve_value_ccp(solved.ccp, model.kernel, model.utility.u, model.beta,
                                       ddcw::SolveMethod::NeumannSeries);
        benchmark::DoNotOptimize(v.v.data());
    }
}
BENCHMARK(BM_SolveValueCcpNeumann)->Arg(20)->Arg(100)->Arg(400);

void BM_StationaryDistribution(benchmark::State& state) {
    const ddcw::ModelSpec model = model_of_size(static_cast<int>(state.range(0)));
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    for (auto _ : state) {
        auto pi = ddcw::stationary_distribution(solved.p_policy);
        benchmark::DoNotOptimize(pi.pi.data());
    }
}
BENCHMARK(BM_StationaryDistribution)->Arg(20)->Arg(100)->Arg(400);

}  // namespace
