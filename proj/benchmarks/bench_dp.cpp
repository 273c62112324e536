#include <benchmark/benchmark.h>

#include "clicooper/dp.hpp"
#include "clicooper/rng.hpp"

using namespace clicooper;

static void BM_clip_rows(benchmark::State& state) {
    TensorF64 batch = TensorF64::zeros({1600, 64});
    CounterRng rng(1);
    for (double& v : batch.values) v = 3.0 * rng.normal();
    for (auto _ : state) {
        TensorF64 copy = batch;
        dp::clip_rows_l1(copy, 45.0);
        benchmark::DoNotOptimize(copy.values.data());
    }
}
BENCHMARK(BM_clip_rows);

static void BM_laplace_perturb(benchmark::State& state) {
    TensorF64 batch = TensorF64::zeros({1600, 64});
    CounterRng rng(1);
    for (double& v : batch.values) v = rng.normal();
    dp::clip_rows_l1(batch, 45.0);
    dp::DpParams params{5.0, 45.0};
    uint64_t seed = 0;
    for (auto _ : state) {
        auto out = dp::laplace_perturb(batch, params, ++seed);
        benchmark::DoNotOptimize(out.values.values.data());
    }
}
BENCHMARK(BM_laplace_perturb);

static void BM_canonical_digest(benchmark::State& state) {
    TensorF64 batch = TensorF64::zeros({1600, 64});
    CounterRng rng(1);
    for (double& v : batch.values) v = rng.normal();
    for (auto _ : state) {
        auto d = dp::canonical_digest(batch);
        benchmark::DoNotOptimize(d.data());
    }
}
BENCHMARK(BM_canonical_digest);
