#include <benchmark/benchmark.h>

#include "ddcw/diagnostics.hpp"

namespace {

struct Fixture {
    ddcw::ModelSpec model;
    ddcw::SolvedModel solved;
    ddcw::WeightSpec w;
    ddcw::Dataset data;
    ddcw::FoldAssignment folds;
    std::vector<ddcw::NuisanceSet> nuisances;

    explicit Fixture(std::int64_t n) {
        model = ddcw::make_random_model(ddcw::reference_model_config());
        solved = ddcw::solve_model(model);
        w = ddcw::build_constant_weight(model.states);
        data = ddcw::simulate(model, solved, n, 7, ddcw::SamplingMode::IIDFromStationary);
        folds = ddcw::FoldAssignment::make(data.n(), 5, 11);
        nuisances = ddcw::fit_folds(data, model, w, folds, ddcw::FirstStageOptions{});
    }
};

void BM_FitFolds(benchmark::State& state) {
    const Fixture fx(state.range(0));
    for (auto _ : state) {
        auto nuis = ddcw::fit_folds(fx.data, fx.model, fx.w, fx.folds, ddcw::FirstStageOptions{});
        benchmark::DoNotOptimize(nuis.data());
    }
}
BENCHMARK(BM_FitFolds)->Arg(2000)->Arg(8000);

void BM_CrossFitOrthogonal(benchmark::State& state) {
    const Fixture fx(state.range(0));
    for (auto _ : state) {
        auto rep = ddcw::cross_fit_estimate(fx.data, fx.folds, fx.nuisances,
                                            ddcw::MomentVariant::Orthogonal, fx.w, fx.model.beta);
        benchmark::DoNotOptimize(rep.theta_hat);
    }
}
BENCHMARK(BM_CrossFitOrthogonal)->Arg(2000)->Arg(8000);

void BM_Simulate(benchmark::State& state) {
    const Fixture fx(2000);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        auto data = ddcw::simulate(fx.model, fx.solved, state.range(0), ++seed,
                                   ddcw::SamplingMode::IIDFromStationary);
        benchmark::DoNotOptimize(data.records.data());
    }
}
BENCHMARK(BM_Simulate)->Arg(2000)->Arg(100000);

}  // namespace
