#include "clicooper/watermark.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clicooper/pipeline.hpp"
#include "clicooper/rng.hpp"

namespace clicooper::wm {

void EmbedConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("EmbedConfig: lambda must be >= 0");
    if (!(eta_goal > 0.0 && eta_goal <= 1.0)) throw std::invalid_argument("EmbedConfig: eta_goal must be in (0, 1]");
    if (B == 0) throw std::invalid_argument("EmbedConfig: B must be >= 1");
    if (max_rounds == 0) throw std::invalid_argument("EmbedConfig: max_rounds must be >= 1");
    if (!(embed_lr > 0.0)) throw std::invalid_argument("EmbedConfig: embed_lr must be > 0");
    if (batch_size == 0) throw std::invalid_argument("EmbedConfig: batch_size must be >= 1");
    if (selected != 0 && selected < B) throw std::invalid_argument("EmbedConfig: M must be >= B");
}

uint32_t EmbedConfig::resolve_selected(size_t param_count) const {
    uint32_t m = selected;
    if (m == 0) m = static_cast<uint32_t>(std::min<size_t>(4ull * B, param_count));
    if (m < B)
        throw std::invalid_argument("EmbedConfig: segment has " + std::to_string(param_count) +
                                    " parameters, fewer than B=" + std::to_string(B));
    if (m > param_count) throw std::invalid_argument("EmbedConfig: M exceeds segment parameter count");
    return m;
}

std::vector<uint32_t> wm_position(uint64_t nonce, uint32_t selected, size_t param_count) {
    if (selected == 0 || selected > param_count)
        throw std::invalid_argument("wm_position: need 1 <= M <= param count, got M=" + std::to_string(selected) +
                                    " for " + std::to_string(param_count) + " parameters");
    std::vector<uint32_t> idx(param_count);
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng(nonce);
    for (uint32_t j = 0; j < selected; ++j) {
        size_t pick = j + static_cast<size_t>(rng.below(param_count - j));
        std::swap(idx[j], idx[pick]);
    }
    idx.resize(selected);
    return idx;
}

Digest32 chain_hash(const Digest32& prev_anchor_digest, uint32_t index, uint64_t nonce,
                    const std::string& identity) {
    if (index == 0) throw std::invalid_argument("chain_hash: link index is 1-based");
    Sha256 h;
    h.update(prev_anchor_digest.data(), prev_anchor_digest.size());
    h.update_u32le(index);
    h.update_u64le(nonce);
    h.update(identity.data(), identity.size());
    return h.finalize();
}

namespace {

uint64_t tagged_seed(const Digest32& d, const char* tag) {
    std::vector<uint8_t> bytes(d.begin(), d.end());
    for (const char* p = tag; *p; ++p) bytes.push_back(static_cast<uint8_t>(*p));
    return seed_from_bytes(bytes);
}

// p_j = sum_m key[j][m] * flat[Z[m]].
std::vector<double> project_logits(const std::vector<double>& flat, const std::vector<uint32_t>& positions,
                                   const TensorF64& key) {
    const uint32_t B = key.rows();
    const uint32_t M = key.cols();
    std::vector<double> selected(M);
    for (uint32_t m = 0; m < M; ++m) selected[m] = flat[positions[m]];
    std::vector<double> p(B, 0.0);
    for (uint32_t j = 0; j < B; ++j) {
        const double* kj = &key.values[static_cast<size_t>(j) * M];
        double acc = 0.0;
        for (uint32_t m = 0; m < M; ++m) acc += kj[m] * selected[m];
        p[j] = acc;
    }
    return p;
}

double eta_from_logits(const std::vector<double>& p, const std::vector<uint8_t>& mark) {
    size_t mismatches = 0;
    for (size_t j = 0; j < p.size(); ++j)
        if ((p[j] >= 0.0 ? 1 : 0) != (mark[j] != 0)) ++mismatches;
    return 1.0 - static_cast<double>(mismatches) / static_cast<double>(p.size());
}

// d(sum BCE)/d(selected weights) given precomputed logits.
std::vector<double> bce_grad_selected(const std::vector<double>& p, const TensorF64& key,
                                      const std::vector<uint8_t>& mark) {
    const uint32_t B = key.rows();
    const uint32_t M = key.cols();
    std::vector<double> grad(M, 0.0);
    for (uint32_t j = 0; j < B; ++j) {
        const double sig = 1.0 / (1.0 + std::exp(-p[j]));
        const double dj = sig - (mark[j] ? 1.0 : 0.0);
        const double* kj = &key.values[static_cast<size_t>(j) * M];
        for (uint32_t m = 0; m < M; ++m) grad[m] += dj * kj[m];
    }
    return grad;
}

} // namespace

std::vector<uint8_t> wm_gen(const Digest32& chain_hash, uint32_t B) {
    CounterRng rng(tagged_seed(chain_hash, "WM"));
    std::vector<uint8_t> bits(B);
    uint64_t word = 0;
    for (uint32_t j = 0; j < B; ++j) {
        if (j % 64 == 0) word = rng.next_u64();
        bits[j] = static_cast<uint8_t>((word >> (j % 64)) & 1);
    }
    return bits;
}

TensorF64 key_gen(const Digest32& chain_hash, uint32_t B, uint32_t selected) {
    CounterRng rng(tagged_seed(chain_hash, "KEY"));
    TensorF64 key = TensorF64::zeros({B, selected});
    for (double& v : key.values) v = rng.normal();
    return key;
}

std::vector<uint8_t> project_extract(const nn::Segment& segment, const std::vector<uint32_t>& positions,
                                     const TensorF64& key) {
    const uint32_t B = key.rows();
    const uint32_t M = key.cols();
    if (positions.size() != M) throw std::invalid_argument("project_extract: |Z| != key columns");
    std::vector<double> flat = nn::flatten_params(segment);
    for (uint32_t z : positions)
        if (z >= flat.size()) throw std::out_of_range("project_extract: position outside segment");
    std::vector<double> p = project_logits(flat, positions, key);
    std::vector<uint8_t> bits(B);
    for (uint32_t j = 0; j < B; ++j) bits[j] = p[j] >= 0.0 ? 1 : 0;
    return bits;
}

RegularizerResult wm_regularizer(const nn::Segment& segment, const std::vector<uint32_t>& positions,
                                 const TensorF64& key, const std::vector<uint8_t>& mark) {
    const uint32_t B = key.rows();
    const uint32_t M = key.cols();
    if (mark.size() != B) throw std::invalid_argument("wm_regularizer: mark length != key rows");
    if (positions.size() != M) throw std::invalid_argument("wm_regularizer: |Z| != key columns");
    std::vector<double> flat = nn::flatten_params(segment);
    std::vector<double> p = project_logits(flat, positions, key);

    RegularizerResult res;
    res.loss = 0.0;
    for (uint32_t j = 0; j < B; ++j) {
        const double target = mark[j] ? 1.0 : 0.0;
        // Stable BCE-with-logits: max(p,0) - p*t + log(1 + exp(-|p|)).
        res.loss += std::max(p[j], 0.0) - p[j] * target + std::log1p(std::exp(-std::abs(p[j])));
    }
    res.grad_selected = bce_grad_selected(p, key, mark);
    return res;
}

double detection_rate(const std::vector<uint8_t>& extracted, const std::vector<uint8_t>& expected) {
    if (extracted.size() != expected.size())
        throw std::invalid_argument("detection_rate: length mismatch (" + std::to_string(extracted.size()) +
                                    " vs " + std::to_string(expected.size()) + ")");
    size_t mismatches = 0;
    for (size_t j = 0; j < extracted.size(); ++j)
        if ((extracted[j] != 0) != (expected[j] != 0)) ++mismatches;
    return 1.0 - static_cast<double>(mismatches) / static_cast<double>(extracted.size());
}

namespace {

// Flat parameter index -> (layer, weight-or-bias offset) for grad routing.
struct FlatIndexMap {
    struct Span {
        size_t weight_begin, weight_end, bias_end;
    };
    std::vector<Span> spans;

    explicit FlatIndexMap(const nn::Segment& s) {
        size_t off = 0;
        for (const auto& l : s.layers) {
            Span sp;
            sp.weight_begin = off;
            sp.weight_end = off + l.weight.values.size();
            sp.bias_end = sp.weight_end + l.bias.size();
            off = sp.bias_end;
            spans.push_back(sp);
        }
    }

    void add(nn::ParamGrads& grads, size_t flat_index, double value) const {
        for (size_t li = 0; li < spans.size(); ++li) {
            const Span& sp = spans[li];
            if (flat_index < sp.weight_end) {
                grads.weight[li].values[flat_index - sp.weight_begin] += value;
                return;
            }
            if (flat_index < sp.bias_end) {
                grads.bias[li][flat_index - sp.weight_end] += value;
                return;
            }
        }
        throw std::out_of_range("FlatIndexMap: index beyond segment");
    }
};

} // namespace

EmbedOutcome embed(std::vector<nn::Segment>& segments, uint32_t index, const dp::DpActivationBatch& cache,
                   const std::vector<int32_t>& pseudo_labels, uint64_t nonce, const std::string& identity,
                   const EmbedConfig& cfg) {
    cfg.validate();
    if (index == 0 || index > segments.size()) throw std::invalid_argument("embed: bad trainer index");
    for (uint32_t j = 0; j + 1 < index; ++j)
        if (!segments[j].frozen)
            throw std::logic_error("embed: link " + std::to_string(j + 1) +
                                   " is not frozen; chain embedding is sequential");
    nn::Segment& target = segments[index - 1];
    if (target.frozen) throw std::logic_error("embed: segment " + std::to_string(index) + " already frozen");

    // Anchor input for this link: the cache itself for link 1, otherwise
    // the frozen upstream forward of the full cache.
    TensorF64 anchor = pipeline::anchor_activation(
        std::span<const nn::Segment>(segments.data(), index - 1), cache);
    Digest32 anchor_digest = (index == 1) ? cache.digest : dp::canonical_digest(anchor);

    WatermarkLink link;
    link.index = index;
    link.nonce = nonce;
    link.identity = identity;
    link.chain_hash = chain_hash(anchor_digest, index, nonce, identity);
    const uint32_t M = cfg.resolve_selected(target.param_count());
    link.positions = wm_position(nonce, M, target.param_count());
    link.mark = wm_gen(link.chain_hash, cfg.B);
    link.key = key_gen(link.chain_hash, cfg.B, M);

    FlatIndexMap index_map(target);
    target.reset_velocity(); // embedding is a fresh optimization phase

    EmbedOutcome out;
    double eta = detection_rate(project_extract(target, link.positions, link.key), link.mark);
    const size_t rows_total = anchor.rows();
    for (uint32_t round = 0; round < cfg.max_rounds && eta < cfg.eta_goal; ++round) {
        std::vector<size_t> perm = pipeline::epoch_permutation(cfg.batch_seed, round, rows_total);
        perm.resize(std::min<size_t>(cfg.batch_size, perm.size()));
        TensorF64 x = anchor.gather_rows(perm);
        std::vector<int32_t> batch_labels;
        batch_labels.reserve(perm.size());
        for (size_t r : perm) batch_labels.push_back(pseudo_labels[r]);

        // Forward through the target segment, then the downstream segments
        // at their converged weights (read-only).
        auto [act, trace] = nn::segment_forward(target, x);
        std::vector<nn::ForwardTrace> down_traces;
        TensorF64 cur = act;
        for (size_t j = index; j < segments.size(); ++j) {
            auto [o, t] = nn::segment_forward(segments[j], cur);
            down_traces.push_back(std::move(t));
            cur = std::move(o);
        }
        nn::XentResult xent = nn::softmax_xent(cur, batch_labels);
        out.main_loss = xent.loss;

        TensorF64 g = xent.grad;
        for (size_t j = segments.size(); j-- > index;) {
            auto [unused, gx] = nn::segment_backward(segments[j], down_traces[j - index], g);
            (void)unused;
            g = std::move(gx);
        }
        auto [grads, gin] = nn::segment_backward(target, trace, g);
        (void)gin;

        if (cfg.lambda != 0.0) {
            RegularizerResult reg = wm_regularizer(target, link.positions, link.key, link.mark);
            for (uint32_t m = 0; m < M; ++m)
                index_map.add(grads, link.positions[m], cfg.lambda * reg.grad_selected[m]);
        }
        nn::sgd_step(target, grads, cfg.embed_lr, cfg.momentum);

        eta = detection_rate(project_extract(target, link.positions, link.key), link.mark);
        out.rounds = round + 1;
    }
    if (eta < cfg.eta_goal)
        throw EmbedFailure("embed: link " + std::to_string(index) + " reached eta=" + std::to_string(eta) +
                               " < goal " + std::to_string(cfg.eta_goal) + " after " +
                               std::to_string(out.rounds) + " rounds" +
                               (cfg.lambda == 0.0 ? " (lambda is 0; the regularizer is required)" : ""),
                           eta, out.rounds);

    target.frozen = true;
    link.eta = eta;
    out.link = std::move(link);
    return out;
}

std::string link_public_json(const WatermarkLink& link) {
    nlohmann::json j;
    j["i"] = link.index;
    j["mu"] = link.nonce;
    j["id"] = link.identity;
    j["eta"] = link.eta;
    return j.dump();
}

} // namespace clicooper::wm
