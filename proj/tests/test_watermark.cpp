#include <doctest.h>

#include <stdexcept>
#include <set>

#include <cmath>

#include "clicooper/dp.hpp"
#include "clicooper/pipeline.hpp"
#include "clicooper/rng.hpp"
#include "clicooper/watermark.hpp"
#include "support/ref_sha256.hpp"

using namespace clicooper;

namespace {

Digest32 toy_digest(uint8_t fill) {
    Digest32 d{};
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<uint8_t>(fill + i);
    return d;
}

struct MiniRun {
    pipeline::ExperimentPlan plan;
    dp::DpActivationBatch cache;
    std::vector<int32_t> labels;
    std::vector<nn::Segment> segments;
};

MiniRun trained_mini_pipeline(uint64_t seed = 1) {
    MiniRun run;
    run.plan.n = 3;
    run.plan.split_widths = {{8, 12}, {12, 10}, {10, 8, 4}};
    run.plan.epochs = 3;
    run.plan.lr = 0.05;
    run.plan.momentum = 0.9;
    run.plan.batch_size = 16;
    run.plan.q = 2;
    run.plan.g = {2, 2};
    run.plan.shuffle_seed = seed;
    run.plan.trainer_seeds = {seed + 1, seed + 2, seed + 3};

    TensorF64 x = TensorF64::zeros({48, 8});
    CounterRng rng(seed + 9);
    for (double& v : x.values) v = rng.normal();
    dp::DpParams p{1e18, 4.0};
    dp::clip_rows_l1(x, p.clip_radius);
    run.cache = dp::laplace_perturb(x, p, seed + 10);
    run.labels.resize(48);
    for (auto& y : run.labels) y = static_cast<int32_t>(rng.below(4));

    auto result = pipeline::run_training(run.plan, run.cache, run.labels);
    run.segments = std::move(result.segments);
    return run;
}

wm::EmbedConfig mini_embed_config() {
    wm::EmbedConfig cfg;
    cfg.B = 64;
    cfg.lambda = 0.5;
    cfg.eta_goal = 0.95;
    cfg.max_rounds = 600;
    cfg.embed_lr = 0.05;
    cfg.momentum = 0.9;
    cfg.batch_size = 16;
    cfg.batch_seed = 5;
    return cfg;
}

} // namespace

TEST_CASE("wm_position: deterministic, distinct, permutation when M == param count") {
    auto a = wm::wm_position(42, 10, 100);
    auto b = wm::wm_position(42, 10, 100);
    CHECK(a == b);
    std::set<uint32_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == 10);

    auto all = wm::wm_position(7, 64, 64);
    std::set<uint32_t> s(all.begin(), all.end());
    CHECK(s.size() == 64);
    CHECK(*s.begin() == 0);
    CHECK(*s.rbegin() == 63);

    CHECK_THROWS_AS(wm::wm_position(1, 65, 64), std::invalid_argument);
}

TEST_CASE("wm_position overlap between two nonces matches the hypergeometric expectation") {
    const uint32_t P = 4096, M = 256;
    const double expect = double(M) * M / P; // 16
    const double var = double(M) * (double(M) / P) * (1.0 - double(M) / P) * ((P - M) / double(P - 1));
    const int trials = 200;
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        auto z1 = wm::wm_position(1000 + t, M, P);
        auto z2 = wm::wm_position(5000 + t, M, P);
        std::set<uint32_t> s(z1.begin(), z1.end());
        int overlap = 0;
        for (uint32_t v : z2) overlap += s.count(v);
        acc += overlap;
    }
    double mean = acc / trials;
    CHECK(std::abs(mean - expect) <= 5.0 * std::sqrt(var / trials));
}

TEST_CASE("chain_hash matches an independent byte-layout recomputation") {
    Digest32 anchor = toy_digest(3);
    const uint32_t index = 2;
    const uint64_t nonce = 0x0123456789abcdefULL;
    const std::string id = "trainer-two";

    Digest32 got = wm::chain_hash(anchor, index, nonce, id);

    std::vector<uint8_t> bytes(anchor.begin(), anchor.end());
    testsupport::push_u32le(bytes, index);
    testsupport::push_u64le(bytes, nonce);
    for (char c : id) bytes.push_back(static_cast<uint8_t>(c));
    auto expect = testsupport::ref_sha256(bytes);
    CHECK(std::equal(got.begin(), got.end(), expect.begin()));
}

TEST_CASE("chain_hash is sensitive to the index and to the anchor digest") {
    Digest32 anchor = toy_digest(1);
    auto h1 = wm::chain_hash(anchor, 1, 5, "T");
    CHECK(wm::chain_hash(anchor, 2, 5, "T") != h1);
    Digest32 tweaked = anchor;
    tweaked[31] ^= 0x80;
    CHECK(wm::chain_hash(tweaked, 1, 5, "T") != h1);
    CHECK_THROWS_AS(wm::chain_hash(anchor, 0, 5, "T"), std::invalid_argument);
}

TEST_CASE("wm_gen and key_gen are deterministic in the chain hash") {
    Digest32 h = toy_digest(9);
    CHECK(wm::wm_gen(h, 128) == wm::wm_gen(h, 128));
    CHECK(wm::key_gen(h, 16, 32).values == wm::key_gen(h, 16, 32).values);
    Digest32 h2 = toy_digest(10);
    CHECK(wm::wm_gen(h, 128) != wm::wm_gen(h2, 128));
}

TEST_CASE("mark bits are balanced at B=2048") {
    auto bits = wm::wm_gen(toy_digest(77), 2048);
    double ones = 0;
    for (uint8_t b : bits) ones += b;
    double balance = ones / 2048.0;
    CHECK(std::abs(balance - 0.5) <= 5.0 / std::sqrt(2048.0));
}

TEST_CASE("project_extract: all-zero weights hit the tie rule (bit 1)") {
    nn::Segment s = nn::init_segment({4, 4}, nn::Activation::Identity, nn::Activation::Identity, 3);
    for (auto& l : s.layers) {
        for (double& v : l.weight.values) v = 0.0;
        for (double& v : l.bias) v = 0.0;
    }
    auto z = wm::wm_position(1, 8, s.param_count());
    auto key = wm::key_gen(toy_digest(2), 8, 8);
    auto bits = wm::project_extract(s, z, key);
    for (uint8_t b : bits) CHECK(b == 1);
}

TEST_CASE("project_extract is invariant to positive scaling of a key row") {
    nn::Segment s = nn::init_segment({5, 4}, nn::Activation::Relu, nn::Activation::Identity, 8);
    auto z = wm::wm_position(3, 12, s.param_count());
    auto key = wm::key_gen(toy_digest(4), 6, 12);
    auto bits = wm::project_extract(s, z, key);
    TensorF64 scaled = key;
    for (uint32_t m = 0; m < 12; ++m) scaled.at(2, m) *= 37.5;
    CHECK(wm::project_extract(s, z, scaled) == bits);
}

TEST_CASE("random segment vs independent mark agrees at 0.5 within the binomial band") {
    const uint32_t B = 2048;
    nn::Segment s = nn::init_segment({32, 40}, nn::Activation::Relu, nn::Activation::Identity, 12345);
    auto z = wm::wm_position(9, 1024, s.param_count());
    auto key = wm::key_gen(toy_digest(21), B, 1024);
    auto mark = wm::wm_gen(toy_digest(22), B); // unrelated hash
    double eta = wm::detection_rate(wm::project_extract(s, z, key), mark);
    CHECK(std::abs(eta - 0.5) <= 5.0 / std::sqrt(double(B)));
}

TEST_CASE("wm_regularizer: zero projections cost B ln 2; saturation costs ~0") {
    nn::Segment s = nn::init_segment({8, 8}, nn::Activation::Identity, nn::Activation::Identity, 5);
    for (auto& l : s.layers) {
        for (double& v : l.weight.values) v = 0.0;
        for (double& v : l.bias) v = 0.0;
    }
    // M >> B keeps the matched-filter cross terms small.
    const uint32_t B = 8, M = 72;
    auto z = wm::wm_position(2, M, s.param_count());
    auto key = wm::key_gen(toy_digest(6), B, M);
    auto mark = wm::wm_gen(toy_digest(7), B);
    auto res = wm::wm_regularizer(s, z, key, mark);
    CHECK(res.loss == doctest::Approx(B * std::log(2.0)).epsilon(1e-12));

    // Saturate: push selected weights far in the mark's direction.
    auto flat = nn::flatten_params(s);
    for (uint32_t m = 0; m < M; ++m) {
        double dir = 0.0;
        for (uint32_t j = 0; j < B; ++j) dir += (mark[j] ? 1.0 : -1.0) * key.at(j, m);
        flat[z[m]] = 50.0 * dir;
    }
    nn::unflatten_params(s, flat);
    auto sat = wm::wm_regularizer(s, z, key, mark);
    CHECK(sat.loss < 1e-6);
    CHECK(wm::detection_rate(wm::project_extract(s, z, key), mark) == doctest::Approx(1.0));
}

TEST_CASE("wm_regularizer gradient matches finite differences") {
    nn::Segment s = nn::init_segment({6, 5}, nn::Activation::Relu, nn::Activation::Identity, 31);
    const uint32_t B = 12, M = 20;
    auto z = wm::wm_position(4, M, s.param_count());
    auto key = wm::key_gen(toy_digest(11), B, M);
    auto mark = wm::wm_gen(toy_digest(12), B);
    auto res = wm::wm_regularizer(s, z, key, mark);

    const double h = 1e-6;
    auto flat = nn::flatten_params(s);
    for (uint32_t m = 0; m < M; ++m) {
        auto fp = flat, fm = flat;
        fp[z[m]] += h;
        fm[z[m]] -= h;
        nn::Segment sp = s, sm = s;
        nn::unflatten_params(sp, fp);
        nn::unflatten_params(sm, fm);
        double fd = (wm::wm_regularizer(sp, z, key, mark).loss - wm::wm_regularizer(sm, z, key, mark).loss) /
                    (2 * h);
        CHECK(std::abs(fd - res.grad_selected[m]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("detection_rate basics") {
    std::vector<uint8_t> a{1, 0, 1, 1, 0, 0, 1, 0};
    CHECK(wm::detection_rate(a, a) == doctest::Approx(1.0));
    std::vector<uint8_t> c;
    for (uint8_t b : a) c.push_back(b ^ 1);
    CHECK(wm::detection_rate(c, a) == doctest::Approx(0.0));
    std::vector<uint8_t> two = a;
    two[0] ^= 1;
    two[5] ^= 1;
    CHECK(wm::detection_rate(two, a) == doctest::Approx(0.75));
    CHECK_THROWS_AS(wm::detection_rate({1, 0}, {1}), std::invalid_argument);
}

TEST_CASE("embed reaches the goal, freezes the segment, and touches nothing else") {
    MiniRun run = trained_mini_pipeline(3);
    auto cfg = mini_embed_config();

    auto before_2 = nn::flatten_params(run.segments[1]);
    auto before_3 = nn::flatten_params(run.segments[2]);

    auto out = wm::embed(run.segments, 1, run.cache, run.labels, 801, "T1", cfg);
    CHECK(out.link.eta >= cfg.eta_goal);
    CHECK(run.segments[0].frozen);
    CHECK(nn::flatten_params(run.segments[1]) == before_2); // locality
    CHECK(nn::flatten_params(run.segments[2]) == before_3);

    // Extraction from the frozen segment reproduces the embedded mark.
    double eta = wm::detection_rate(wm::project_extract(run.segments[0], out.link.positions, out.link.key),
                                    out.link.mark);
    CHECK(eta == doctest::Approx(out.link.eta));
}

TEST_CASE("embedding is sequential: link 2 requires link 1 frozen") {
    MiniRun run = trained_mini_pipeline(4);
    auto cfg = mini_embed_config();
    CHECK_THROWS_WITH_AS(wm::embed(run.segments, 2, run.cache, run.labels, 802, "T2", cfg),
                         doctest::Contains("sequential"), std::logic_error);
    wm::embed(run.segments, 1, run.cache, run.labels, 801, "T1", cfg);
    CHECK_NOTHROW(wm::embed(run.segments, 2, run.cache, run.labels, 802, "T2", cfg));
    // Re-embedding a frozen link is rejected.
    CHECK_THROWS_AS(wm::embed(run.segments, 1, run.cache, run.labels, 801, "T1", cfg), std::logic_error);
}

TEST_CASE("lambda = 0 leaves eta near chance and embedding fails") {
    MiniRun run = trained_mini_pipeline(5);
    auto cfg = mini_embed_config();
    cfg.lambda = 0.0;
    cfg.max_rounds = 40;
    try {
        wm::embed(run.segments, 1, run.cache, run.labels, 801, "T1", cfg);
        FAIL("embedding without the regularizer must not reach the goal");
    } catch (const wm::EmbedFailure& e) {
        CHECK(e.eta < 0.8); // hovers near 0.5
        CHECK(e.rounds == cfg.max_rounds);
    }
}

TEST_CASE("chain binding: any tampered derivation input decorrelates the mark") {
    const uint32_t B = 2048;
    Digest32 anchor = toy_digest(50);
    const uint64_t nonce = 4242;
    const std::string id = "T1";
    auto mark = wm::wm_gen(wm::chain_hash(anchor, 1, nonce, id), B);

    auto band = 5.0 / std::sqrt(double(B));
    Digest32 other_anchor = anchor;
    other_anchor[0] ^= 1;
    auto m1 = wm::wm_gen(wm::chain_hash(other_anchor, 1, nonce, id), B);
    CHECK(std::abs(wm::detection_rate(m1, mark) - 0.5) <= band);

    auto m2 = wm::wm_gen(wm::chain_hash(anchor, 2, nonce, id), B);
    CHECK(std::abs(wm::detection_rate(m2, mark) - 0.5) <= band);

    auto m3 = wm::wm_gen(wm::chain_hash(anchor, 1, nonce + 1, id), B);
    CHECK(std::abs(wm::detection_rate(m3, mark) - 0.5) <= band);

    auto m4 = wm::wm_gen(wm::chain_hash(anchor, 1, nonce, "TX"), B);
    CHECK(std::abs(wm::detection_rate(m4, mark) - 0.5) <= band);
}

TEST_CASE("link public JSON carries exactly (i, mu, id, eta)") {
    wm::WatermarkLink link;
    link.index = 2;
    link.nonce = 99;
    link.identity = "T2";
    link.eta = 0.9921875;
    auto text = wm::link_public_json(link);
    CHECK(text.find("\"i\":2") != std::string::npos);
    CHECK(text.find("\"mu\":99") != std::string::npos);
    CHECK(text.find("\"id\":\"T2\"") != std::string::npos);
    CHECK(text.find("eta") != std::string::npos);
    CHECK(text.find("mark") == std::string::npos); // never serialized
    CHECK(text.find("key") == std::string::npos);
}
