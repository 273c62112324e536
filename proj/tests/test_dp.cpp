#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdio>
#include <limits>

#include "clicooper/checkpoint.hpp"
#include "clicooper/dp.hpp"
#include "clicooper/labelspace.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/rng.hpp"
#include "support/ref_sha256.hpp"

using namespace clicooper;

TEST_CASE("clip_l1: rows inside the ball pass through unchanged") {
    std::vector<double> row{0.2, -0.3};
    CHECK(dp::clip_l1(row, 1.0) == row);
}

TEST_CASE("clip_l1: boundary scaling lands exactly on the sphere") {
    auto out = dp::clip_l1({1.0, -1.0}, 1.0);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(-0.5));
    CHECK(std::abs(out[0]) + std::abs(out[1]) == doctest::Approx(1.0));
}

TEST_CASE("clip_l1: every clipped row satisfies the norm bound") {
    CounterRng rng(2024);
    const double S = 2.5;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> row(8);
        for (double& v : row) v = 4.0 * rng.normal();
        auto out = dp::clip_l1(row, S);
        double norm = 0.0;
        for (double v : out) norm += std::abs(v);
        CHECK(norm <= S + 1e-12);
    }
}

TEST_CASE("noise scale b equals 2S/epsilon, and the paper's operating points parse") {
    CHECK(dp::DpParams{2.0, 1.0}.noise_scale() == doctest::Approx(1.0));
    for (double eps : {2.0, 5.0, 10.0}) {
        dp::DpParams p{eps, 1.0};
        CHECK(p.noise_scale() == doctest::Approx(2.0 / eps));
        CHECK(p.sensitivity() == doctest::Approx(2.0));
    }
    CHECK_THROWS_AS((dp::DpParams{0.0, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((dp::DpParams{-1.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("laplace noise: empirical mean |noise| matches b within 1%") {
    CounterRng rng(77);
    const double b = 1.0;
    const int n = 1000000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::abs(rng.laplace(b));
    double mean = acc / n;
    CHECK(std::abs(mean - b) / b < 0.01);
}

TEST_CASE("laplace_perturb is seed-deterministic and checks the clip precondition") {
    TensorF64 rows = TensorF64::zeros({4, 3});
    CounterRng rng(5);
    for (double& v : rows.values) v = rng.normal();
    dp::clip_rows_l1(rows, 1.0);
    dp::DpParams p{5.0, 1.0};

    auto a = dp::laplace_perturb(rows, p, 99);
    auto b = dp::laplace_perturb(rows, p, 99);
    CHECK(a.values.values == b.values.values);
    CHECK(a.digest == b.digest);

    TensorF64 unclipped({1, 2}, {5.0, 5.0});
    CHECK_THROWS_AS(dp::laplace_perturb(unclipped, p, 1), std::invalid_argument);
}

TEST_CASE("epsilon -> infinity releases the clipped activations exactly") {
    TensorF64 rows = TensorF64::zeros({3, 4});
    CounterRng rng(6);
    for (double& v : rows.values) v = rng.normal();
    dp::clip_rows_l1(rows, 2.0);
    dp::DpParams p{std::numeric_limits<double>::infinity(), 2.0};
    auto out = dp::laplace_perturb(rows, p, 1234);
    CHECK(out.values.values == rows.values);
}

TEST_CASE("protect requires a frozen client segment and caches one row per sample") {
    auto enc = nn::init_segment({4, 4}, nn::Activation::Identity, nn::Activation::Identity, 9,
                                nn::InitStyle::NearIdentity);
    labels::LabelMap map = labels::build_label_map(2, {1, 1}, 3);
    TensorF64 x = TensorF64::zeros({10, 4});
    CounterRng rng(4);
    for (double& v : x.values) v = rng.normal();
    std::vector<int32_t> y{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    auto ds = labels::expand_dataset(x, y, map, 0.1, 8);

    dp::DpParams p{5.0, 1.0};
    CHECK_THROWS_AS(dp::protect(enc, ds, p, 1), std::logic_error); // not frozen

    enc.frozen = true;
    auto cache = dp::protect(enc, ds, p, 1);
    CHECK(cache.values.rows() == ds.size());
    auto cache2 = dp::protect(enc, ds, p, 1);
    CHECK(cache.digest == cache2.digest);
    CHECK(cache.values.values == cache2.values.values);
}

TEST_CASE("canonical digest: stability, sensitivity, and the empty-tensor layout") {
    TensorF64 t({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto d1 = dp::canonical_digest(t);
    auto d2 = dp::canonical_digest(t);
    CHECK(d1 == d2);

    TensorF64 flipped = t;
    flipped.values[2] = -flipped.values[2];
    CHECK(dp::canonical_digest(flipped) != d1);

    // Empty tensor: digest covers only the 4-byte shape header.
    TensorF64 empty = TensorF64::zeros({0});
    std::vector<uint8_t> header;
    testsupport::push_u32le(header, 0);
    auto expect = testsupport::ref_sha256(header);
    auto got = dp::canonical_digest(empty);
    CHECK(std::equal(got.begin(), got.end(), expect.begin()));

    // Independent recomputation of a non-trivial digest.
    std::vector<uint8_t> bytes;
    testsupport::push_u32le(bytes, 2);
    testsupport::push_u32le(bytes, 2);
    for (double v : t.values) testsupport::push_f64le(bytes, v);
    auto expect2 = testsupport::ref_sha256(bytes);
    CHECK(std::equal(d1.begin(), d1.end(), expect2.begin()));

    TensorF64 bad({1, 1}, {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(dp::canonical_digest(bad), std::invalid_argument);
}

TEST_CASE("cache file round-trips and detects tampering") {
    TensorF64 rows = TensorF64::zeros({5, 3});
    CounterRng rng(15);
    for (double& v : rows.values) v = rng.normal();
    dp::clip_rows_l1(rows, 1.5);
    auto cache = dp::laplace_perturb(rows, dp::DpParams{5.0, 1.5}, 321);

    const std::string path = "test_cache_tmp.cldp";
    dp::save_cache(cache, path);
    auto back = dp::load_cache(path);
    CHECK(back.values.values == cache.values.values);
    CHECK(back.digest == cache.digest);
    CHECK(back.seed == cache.seed);
    CHECK(back.params.epsilon == cache.params.epsilon);

    // Corrupt one payload byte: load must reject.
    auto bytes = io::read_file(path);
    bytes[64] ^= 0x01;
    io::write_file(path, bytes);
    CHECK_THROWS_WITH_AS(dp::load_cache(path), doctest::Contains("digest"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("Theorem-style sensitivity: clipped pairs stay within Delta1 = 2S") {
    CounterRng rng(31415);
    const double S = 1.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(6), y(6);
        for (double& v : x) v = 3.0 * rng.normal();
        for (double& v : y) v = 3.0 * rng.normal();
        auto cx = dp::clip_l1(x, S);
        auto cy = dp::clip_l1(y, S);
        double dist = 0.0;
        for (size_t i = 0; i < cx.size(); ++i) dist += std::abs(cx[i] - cy[i]);
        CHECK(dist <= 2.0 * S + 1e-12);
    }
}

TEST_CASE("density-ratio bound holds analytically per sample") {
    // For Laplace(b) with b = Delta1/eps: log p(y|x') - log p(y|x)
    // = (||y-x||_1 - ||y-x'||_1)/b <= ||x-x'||_1/b <= eps.
    CounterRng rng(8);
    const double S = 1.0, eps = 2.0;
    dp::DpParams params{eps, S};
    const double b = params.noise_scale();
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> x(5), xp(5), obs(5);
        for (double& v : x) v = 2.0 * rng.normal();
        for (double& v : xp) v = 2.0 * rng.normal();
        auto cx = dp::clip_l1(x, S);
        auto cxp = dp::clip_l1(xp, S);
        for (size_t i = 0; i < obs.size(); ++i) obs[i] = cx[i] + rng.laplace(b);
        double l1_x = 0.0, l1_xp = 0.0, l1_diff = 0.0;
        for (size_t i = 0; i < obs.size(); ++i) {
            l1_x += std::abs(obs[i] - cx[i]);
            l1_xp += std::abs(obs[i] - cxp[i]);
            l1_diff += std::abs(cx[i] - cxp[i]);
        }
        double log_ratio = (l1_xp - l1_x) / b;
        CHECK(log_ratio <= eps * l1_diff / params.sensitivity() + 1e-9);
        CHECK(eps * l1_diff / params.sensitivity() <= eps + 1e-9);
    }
}

TEST_CASE("pairwise linkage ratio never exceeds e^{2 eps} on discrete instances") {
    // Two-point candidate class, scalar observations on a small grid: the
    // joint same-class likelihood ratio of Theorem form is bounded by
    // e^{2 eps}.
    const double S = 1.0, eps = 1.2;
    const double b = 2.0 * S / eps;
    auto lap = [&](double y, double x) { return std::exp(-std::abs(y - x) / b) / (2.0 * b); };

    std::vector<double> members{-S / 2, S / 2}; // clipped scalar inputs
    std::vector<double> grid;
    for (int i = -6; i <= 6; ++i) grid.push_back(i * 0.5);

    const double bound = std::exp(2.0 * eps) * (1.0 + 1e-9);
    for (double ya : grid)
        for (double yb : grid)
            for (double yc : grid) {
                double num = 0.0, den = 0.0;
                for (double x : members) {
                    num += lap(ya, x) * lap(yb, x) * 0.5;
                    den += lap(ya, x) * lap(yc, x) * 0.5;
                }
                CHECK(num / den <= bound);
            }
}
