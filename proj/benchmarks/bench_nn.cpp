#include <benchmark/benchmark.h>

#include "clicooper/nn.hpp"
#include "clicooper/rng.hpp"

using namespace clicooper;

static TensorF64 random_batch(uint32_t rows, uint32_t cols, uint64_t seed) {
    TensorF64 t = TensorF64::zeros({rows, cols});
    CounterRng rng(seed);
    for (double& v : t.values) v = rng.normal();
    return t;
}

static void BM_segment_forward(benchmark::State& state) {
    auto seg = nn::init_segment({64, 48, 32}, nn::Activation::Relu, nn::Activation::Identity, 1);
    TensorF64 batch = random_batch(128, 64, 2);
    for (auto _ : state) {
        auto [out, trace] = nn::segment_forward(seg, batch);
        benchmark::DoNotOptimize(out.values.data());
    }
}
BENCHMARK(BM_segment_forward);

static void BM_segment_backward(benchmark::State& state) {
    auto seg = nn::init_segment({64, 48, 32}, nn::Activation::Relu, nn::Activation::Identity, 1);
    TensorF64 batch = random_batch(128, 64, 2);
    auto [out, trace] = nn::segment_forward(seg, batch);
    TensorF64 up = random_batch(128, 32, 3);
    for (auto _ : state) {
        auto [grads, gin] = nn::segment_backward(seg, trace, up);
        benchmark::DoNotOptimize(gin.values.data());
    }
}
BENCHMARK(BM_segment_backward);

BENCHMARK_MAIN();
