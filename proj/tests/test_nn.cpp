#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "clicooper/checkpoint.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/rng.hpp"

using namespace clicooper;

namespace {

TensorF64 random_batch(uint32_t rows, uint32_t cols, uint64_t seed, double scale = 1.0) {
    TensorF64 t = TensorF64::zeros({rows, cols});
    CounterRng rng(seed);
    for (double& v : t.values) v = scale * rng.normal();
    return t;
}

// Independent straight-line evaluation: no shared code with segment_forward.
std::vector<double> straight_line_eval(const nn::Segment& s, const std::vector<double>& x) {
    std::vector<double> cur = x;
    for (const auto& layer : s.layers) {
        std::vector<double> next(layer.out_dim(), 0.0);
        for (uint32_t j = 0; j < layer.out_dim(); ++j) {
            double acc = layer.bias[j];
            for (uint32_t k = 0; k < layer.in_dim(); ++k) acc += layer.weight.at(j, k) * cur[k];
            if (layer.activation == nn::Activation::Relu && acc < 0.0) acc = 0.0;
            next[j] = acc;
        }
        cur = std::move(next);
    }
    return cur;
}

double loss_of(const nn::Segment& s, const TensorF64& batch, const TensorF64& upstream) {
    // L = sum(upstream ∘ output); gives dL/doutput == upstream exactly.
    TensorF64 out = nn::segment_infer(s, batch);
    double acc = 0.0;
    for (size_t i = 0; i < out.values.size(); ++i) acc += upstream.values[i] * out.values[i];
    return acc;
}

} // namespace

TEST_CASE("segment_forward identity layer is the identity") {
    nn::Segment s;
    nn::DenseLayer l;
    l.weight = TensorF64::zeros({3, 3});
    for (int i = 0; i < 3; ++i) l.weight.at(i, i) = 1.0;
    l.bias.assign(3, 0.0);
    l.activation = nn::Activation::Identity;
    s.layers.push_back(l);

    TensorF64 x({2, 3}, {1.0, -2.0, 3.0, 0.5, 0.0, -1.5});
    auto [out, trace] = nn::segment_forward(s, x);
    CHECK(out.values == x.values);
    CHECK(trace.depth() == 1);
}

TEST_CASE("segment_forward relu clamps negatives") {
    nn::Segment s;
    nn::DenseLayer l;
    l.weight = TensorF64::zeros({2, 2});
    l.weight.at(0, 0) = 1.0;
    l.weight.at(1, 1) = 1.0;
    l.bias.assign(2, 0.0);
    l.activation = nn::Activation::Relu;
    s.layers.push_back(l);

    TensorF64 x({1, 2}, {-1.0, 2.0});
    auto out = nn::segment_infer(s, x);
    CHECK(out.values[0] == 0.0);
    CHECK(out.values[1] == 2.0);
}

TEST_CASE("segment_forward matches an independent straight-line oracle") {
    auto s = nn::init_segment({5, 7, 4}, nn::Activation::Relu, nn::Activation::Identity, 77);
    TensorF64 batch = random_batch(6, 5, 123);
    auto out = nn::segment_infer(s, batch);
    for (uint32_t r = 0; r < 6; ++r) {
        std::vector<double> expect = straight_line_eval(s, batch.row(r));
        for (uint32_t c = 0; c < 4; ++c) CHECK(out.at(r, c) == doctest::Approx(expect[c]).epsilon(1e-12));
    }
}

TEST_CASE("segment_forward rejects shape mismatches with a diagnostic") {
    auto s = nn::init_segment({4, 3}, nn::Activation::Relu, nn::Activation::Identity, 1);
    TensorF64 bad = random_batch(2, 5, 9);
    CHECK_THROWS_WITH_AS(nn::segment_forward(s, bad),
                         doctest::Contains("batch width 5"), std::invalid_argument);
}

TEST_CASE("segment_backward: zero upstream grad gives zero grads") {
    auto s = nn::init_segment({4, 6, 3}, nn::Activation::Relu, nn::Activation::Identity, 3);
    TensorF64 batch = random_batch(5, 4, 17);
    auto [out, trace] = nn::segment_forward(s, batch);
    TensorF64 zeros = TensorF64::zeros(out.shape);
    auto [grads, gin] = nn::segment_backward(s, trace, zeros);
    for (const auto& gw : grads.weight)
        for (double v : gw.values) CHECK(v == 0.0);
    for (double v : gin.values) CHECK(v == 0.0);
}

TEST_CASE("segment_backward matches central finite differences") {
    // Random 3x4-ish segments, both parameter and input gradients.
    for (uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
        auto s = nn::init_segment({3, 4, 2}, nn::Activation::Relu, nn::Activation::Identity, seed);
        TensorF64 batch = random_batch(4, 3, seed * 31 + 1);
        TensorF64 upstream = random_batch(4, 2, seed * 31 + 2);

        auto [out, trace] = nn::segment_forward(s, batch);
        auto [grads, gin] = nn::segment_backward(s, trace, upstream);

        const double h = 1e-6;
        for (size_t li = 0; li < s.layers.size(); ++li) {
            for (size_t wi = 0; wi < s.layers[li].weight.values.size(); ++wi) {
                nn::Segment sp = s, sm = s;
                sp.layers[li].weight.values[wi] += h;
                sm.layers[li].weight.values[wi] -= h;
                double fd = (loss_of(sp, batch, upstream) - loss_of(sm, batch, upstream)) / (2 * h);
                double an = grads.weight[li].values[wi];
                CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
            for (size_t bi = 0; bi < s.layers[li].bias.size(); ++bi) {
                nn::Segment sp = s, sm = s;
                sp.layers[li].bias[bi] += h;
                sm.layers[li].bias[bi] -= h;
                double fd = (loss_of(sp, batch, upstream) - loss_of(sm, batch, upstream)) / (2 * h);
                CHECK(std::abs(fd - grads.bias[li][bi]) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
        for (size_t xi = 0; xi < batch.values.size(); ++xi) {
            TensorF64 bp = batch, bm = batch;
            bp.values[xi] += h;
            bm.values[xi] -= h;
            double fd = (loss_of(s, bp, upstream) - loss_of(s, bm, upstream)) / (2 * h);
            CHECK(std::abs(fd - gin.values[xi]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("backward through two segments equals backward through their merge") {
    auto s1 = nn::init_segment({4, 6}, nn::Activation::Relu, nn::Activation::Relu, 5);
    auto s2 = nn::init_segment({6, 3}, nn::Activation::Relu, nn::Activation::Identity, 6);
    std::vector<nn::Segment> parts{s1, s2};
    auto merged = nn::merge_segments(parts);

    TensorF64 batch = random_batch(7, 4, 99);
    TensorF64 upstream = random_batch(7, 3, 100);

    auto [o1, t1] = nn::segment_forward(s1, batch);
    auto [o2, t2] = nn::segment_forward(s2, o1);
    auto [om, tm] = nn::segment_forward(merged, batch);
    CHECK(o2.values == om.values);

    auto [g2, gi2] = nn::segment_backward(s2, t2, upstream);
    auto [g1, gi1] = nn::segment_backward(s1, t1, gi2);
    auto [gm, gim] = nn::segment_backward(merged, tm, upstream);
    CHECK(gi1.values == gim.values);
    CHECK(g1.weight[0].values == gm.weight[0].values);
    CHECK(g2.weight[0].values == gm.weight[1].values);
}

TEST_CASE("segment_backward rejects a stale or missing trace") {
    auto s = nn::init_segment({3, 3, 3}, nn::Activation::Relu, nn::Activation::Identity, 8);
    TensorF64 batch = random_batch(2, 3, 4);
    auto [out, trace] = nn::segment_forward(s, batch);
    nn::ForwardTrace truncated = trace;
    truncated.inputs.pop_back();
    truncated.pre_activations.pop_back();
    CHECK_THROWS_AS(nn::segment_backward(s, truncated, out), std::invalid_argument);
}

TEST_CASE("sgd_step: momentum 0, lr 1 is a plain gradient step") {
    auto s = nn::init_segment({2, 2}, nn::Activation::Identity, nn::Activation::Identity, 2);
    auto w0 = nn::flatten_params(s);
    auto grads = nn::ParamGrads::zeros_like(s);
    for (double& v : grads.weight[0].values) v = 0.25;
    for (double& v : grads.bias[0]) v = -0.5;
    nn::sgd_step(s, grads, 1.0, 0.0);
    auto w1 = nn::flatten_params(s);
    for (size_t i = 0; i < 4; ++i) CHECK(w1[i] == doctest::Approx(w0[i] - 0.25));
    for (size_t i = 4; i < 6; ++i) CHECK(w1[i] == doctest::Approx(w0[i] + 0.5));
}

TEST_CASE("sgd_step: zero grad and zero velocity leave parameters unchanged") {
    auto s = nn::init_segment({3, 2}, nn::Activation::Relu, nn::Activation::Identity, 21);
    auto before = nn::flatten_params(s);
    nn::sgd_step(s, nn::ParamGrads::zeros_like(s), 0.3, 0.9);
    CHECK(nn::flatten_params(s) == before);
}

TEST_CASE("sgd_step: two momentum steps reproduce the hand-unrolled recurrence") {
    // Scalar case: w0=1, g=0.5 both steps, lr=0.1, momentum=0.9.
    // v1 = 0.5, w1 = 1 - 0.05 = 0.95
    // v2 = 0.9*0.5 + 0.5 = 0.95, w2 = 0.95 - 0.095 = 0.855
    nn::Segment s;
    nn::DenseLayer l;
    l.weight = TensorF64({1, 1}, {1.0});
    l.bias.assign(1, 0.0);
    l.activation = nn::Activation::Identity;
    s.layers.push_back(l);
    s.reset_velocity();

    auto grads = nn::ParamGrads::zeros_like(s);
    grads.weight[0].values[0] = 0.5;
    nn::sgd_step(s, grads, 0.1, 0.9);
    CHECK(s.layers[0].weight.values[0] == doctest::Approx(0.95));
    nn::sgd_step(s, grads, 0.1, 0.9);
    CHECK(s.layers[0].weight.values[0] == doctest::Approx(0.855));
}

TEST_CASE("sgd_step rejects frozen segments") {
    auto s = nn::init_segment({2, 2}, nn::Activation::Relu, nn::Activation::Identity, 2);
    s.frozen = true;
    CHECK_THROWS_AS(nn::sgd_step(s, nn::ParamGrads::zeros_like(s), 0.1, 0.9), std::logic_error);
}

TEST_CASE("softmax_xent: uniform logits give ln(C)") {
    TensorF64 logits = TensorF64::zeros({3, 5});
    auto res = nn::softmax_xent(logits, {0, 2, 4});
    CHECK(res.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("softmax_xent: confident correct logits drive loss to zero") {
    TensorF64 logits = TensorF64::zeros({2, 3});
    logits.at(0, 1) = 50.0;
    logits.at(1, 2) = 50.0;
    auto res = nn::softmax_xent(logits, {1, 2});
    CHECK(res.loss < 1e-12);
}

TEST_CASE("softmax_xent rejects out-of-range labels") {
    TensorF64 logits = TensorF64::zeros({1, 3});
    CHECK_THROWS_AS(nn::softmax_xent(logits, {3}), std::out_of_range);
    CHECK_THROWS_AS(nn::softmax_xent(logits, {-1}), std::out_of_range);
}

TEST_CASE("softmax_xent gradient matches finite differences") {
    CounterRng rng(404);
    TensorF64 logits = TensorF64::zeros({4, 3});
    for (double& v : logits.values) v = rng.normal();
    std::vector<int32_t> labels{0, 2, 1, 1};
    auto res = nn::softmax_xent(logits, labels);
    const double h = 1e-6;
    for (size_t i = 0; i < logits.values.size(); ++i) {
        TensorF64 lp = logits, lm = logits;
        lp.values[i] += h;
        lm.values[i] -= h;
        double fd = (nn::softmax_xent(lp, labels).loss - nn::softmax_xent(lm, labels).loss) / (2 * h);
        CHECK(std::abs(fd - res.grad.values[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("flatten_params: counting, round trip, stability") {
    auto s = nn::init_segment({2, 2}, nn::Activation::Relu, nn::Activation::Identity, 55);
    auto flat = nn::flatten_params(s);
    CHECK(flat.size() == 6); // 2x2 weight + 2 bias

    auto s2 = nn::init_segment({2, 2}, nn::Activation::Relu, nn::Activation::Identity, 56);
    nn::unflatten_params(s2, flat);
    CHECK(nn::flatten_params(s2) == flat);

    auto again = nn::init_segment({2, 2}, nn::Activation::Relu, nn::Activation::Identity, 55);
    CHECK(nn::flatten_params(again) == flat); // same seed, same order
}

TEST_CASE("init_segment is deterministic and frozen checkpoints round-trip bit-exactly") {
    auto a = nn::init_segment({5, 9, 4}, nn::Activation::Relu, nn::Activation::Identity, 314);
    auto b = nn::init_segment({5, 9, 4}, nn::Activation::Relu, nn::Activation::Identity, 314);
    CHECK(nn::flatten_params(a) == nn::flatten_params(b));

    a.frozen = true;
    auto bytes = io::segment_to_bytes(a);
    auto back = io::segment_from_bytes(bytes);
    CHECK(io::segment_to_bytes(back) == bytes);
    CHECK(nn::flatten_params(back) == nn::flatten_params(a));
    CHECK(back.layers[0].activation == a.layers[0].activation);
}

TEST_CASE("checkpoint header carries magic, version, and layer dims") {
    auto s = nn::init_segment({3, 2}, nn::Activation::Relu, nn::Activation::Identity, 1);
    auto bytes = io::segment_to_bytes(s);
    REQUIRE(bytes.size() > 8);
    CHECK(bytes[0] == 'C');
    CHECK(bytes[1] == 'L');
    CHECK(bytes[2] == 'W');
    CHECK(bytes[3] == 'C');
    CHECK((bytes[4] | bytes[5] << 8) == io::kCheckpointVersion);
    CHECK((bytes[6] | bytes[7] << 8) == 1); // one layer
    // in=3, out=2, activation code follows.
    CHECK(bytes[8] == 3);
    CHECK(bytes[12] == 2);
    CHECK(bytes[16] == 1); // sole layer is the head: identity wire code
}
