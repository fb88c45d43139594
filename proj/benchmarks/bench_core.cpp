#include <benchmark/benchmark.h>

#include <cmath>

#include "soctwin/calibrate.hpp"
#include "soctwin/imex.hpp"

using namespace soctwin;

namespace {

ScalarField blob(int n) {
    ScalarField u(n, n, 1.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double r2 = (x - n / 2.0) * (x - n / 2.0) + (y - n / 2.0) * (y - n / 2.0);
            u(x, y) = 0.8 * std::exp(-r2 / (0.02 * n * n));
        }
    return u;
}

PatientRecord bench_patient(int n) {
    PatientRecord p;
    p.id = "B0";
    p.anatomy.domain = DomainMask::full(n, n);
    for (double day : {0.0, 10.0, 20.0}) {
        Observation o;
        o.day = day;
        o.mask = threshold(blob(n), 0.3 + 0.01 * day);
        p.observations.push_back(o);
    }
    p.timeline.rt = {{12.0, 2.0}, {13.0, 2.0}, {14.0, 2.0}};
    p.timeline.chemo = {{12.0, 1.0, 0.1, "TMZ"}};
    return p;
}

}  // namespace

static void BM_ImplicitDiffusion(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const LaplacianOperator L(DomainMask::full(n, n), 1.0);
    const ScalarField u = blob(n);
    const RolloutConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(implicit_diffusion_step(u, 0.5, 0.5, L, cfg));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_ImplicitDiffusion)->Arg(32)->Arg(64)->Arg(128);

static void BM_RiccatiStep(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ScalarField u = blob(n);
    for (auto _ : state) benchmark::DoNotOptimize(riccati_step(u, 0.05, 1.0, 0.02, 0.5));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_RiccatiStep)->Arg(64)->Arg(128);

static void BM_StepIntervalTenDays(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const SpatialModel model(DomainMask::full(n, n), 1.0);
    const ScalarField u = blob(n);
    RolloutConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(step_interval(TwinState{u, 0.0}, 10.0, BioParams{}, TreatmentTimeline{}, model, cfg));
    }
}
BENCHMARK(BM_StepIntervalTenDays)->Arg(32)->Arg(64);

static void BM_AdjointGradient(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const PatientRecord p = bench_patient(n);
    RolloutConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(grad_adjoint(p, BioParams{}, ModulatorWeights::zeros(), cfg, LossConfig{}));
    }
}
BENCHMARK(BM_AdjointGradient)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
