#include <benchmark/benchmark.h>

#include "clicooper/watermark.hpp"

using namespace clicooper;

namespace {

struct Fixture {
    nn::Segment segment;
    std::vector<uint32_t> positions;
    TensorF64 key;
    std::vector<uint8_t> mark;

    explicit Fixture(uint32_t B) {
        segment = nn::init_segment({64, 96, 64}, nn::Activation::Relu, nn::Activation::Identity, 9);
        Digest32 h{};
        h[0] = 42;
        uint32_t M = std::min<uint32_t>(4 * B, static_cast<uint32_t>(segment.param_count()));
        positions = wm::wm_position(7, M, segment.param_count());
        key = wm::key_gen(h, B, M);
        mark = wm::wm_gen(h, B);
    }
};

} // namespace

static void BM_project_extract(benchmark::State& state) {
    Fixture f(static_cast<uint32_t>(state.range(0)));
    for (auto _ : state) {
        auto bits = wm::project_extract(f.segment, f.positions, f.key);
        benchmark::DoNotOptimize(bits.data());
    }
}
BENCHMARK(BM_project_extract)->Arg(512)->Arg(1024)->Arg(2048);

static void BM_wm_regularizer(benchmark::State& state) {
    Fixture f(static_cast<uint32_t>(state.range(0)));
    for (auto _ : state) {
        auto res = wm::wm_regularizer(f.segment, f.positions, f.key, f.mark);
        benchmark::DoNotOptimize(res.grad_selected.data());
    }
}
BENCHMARK(BM_wm_regularizer)->Arg(512)->Arg(2048);

static void BM_key_gen(benchmark::State& state) {
    Digest32 h{};
    h[5] = 1;
    const uint32_t B = static_cast<uint32_t>(state.range(0));
    for (auto _ : state) {
        auto key = wm::key_gen(h, B, 4 * B);
        benchmark::DoNotOptimize(key.values.data());
    }
}
BENCHMARK(BM_key_gen)->Arg(512)->Arg(2048);
