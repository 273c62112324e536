#include "clicooper/labelspace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "clicooper/rng.hpp"

namespace clicooper::labels {

uint32_t LabelMap::total_pseudo() const {
    uint32_t t = 0;
    for (uint32_t gi : g) t += gi;
    return t;
}

void LabelMap::validate() const {
    if (q < 2) throw std::invalid_argument("LabelMap: q must be >= 2");
    if (g.size() != q) throw std::invalid_argument("LabelMap: g length != q");
    for (uint32_t gi : g)
        if (gi < 1) throw std::invalid_argument("LabelMap: all g_i must be >= 1");
    const uint32_t total = total_pseudo();
    if (forward.size() != q || inverse.size() != total)
        throw std::invalid_argument("LabelMap: table sizes inconsistent");
    std::vector<bool> seen(total, false);
    for (uint32_t i = 0; i < q; ++i) {
        if (forward[i].size() != g[i]) throw std::invalid_argument("LabelMap: group size != g_i");
        for (int32_t p : forward[i]) {
            if (p < 0 || static_cast<uint32_t>(p) >= total || seen[p])
                throw std::invalid_argument("LabelMap: pseudo ids are not a permutation");
            seen[p] = true;
            if (inverse[p] != static_cast<int32_t>(i))
                throw std::invalid_argument("LabelMap: forward/inverse disagree");
        }
    }
}

LabelMap build_label_map(uint32_t q, const std::vector<uint32_t>& g, uint64_t seed) {
    if (q < 2) throw std::invalid_argument("build_label_map: q must be >= 2");
    if (g.size() != q)
        throw std::invalid_argument("build_label_map: g has " + std::to_string(g.size()) +
                                    " entries for q=" + std::to_string(q));
    for (uint32_t gi : g)
        if (gi < 1) throw std::invalid_argument("build_label_map: g_i must be >= 1");

    LabelMap map;
    map.q = q;
    map.g = g;
    map.seed = seed;
    const uint32_t total = map.total_pseudo();

    // Pseudo ids are a seeded permutation; a dedicated sub-seed keeps the
    // shuffle independent of anything else derived from `seed`.
    std::vector<int32_t> perm(total);
    std::iota(perm.begin(), perm.end(), 0);
    CounterRng rng(mix_seed(seed, 0x4c61626c53686600ULL)); // "LablShf"
    for (uint32_t i = total; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    map.inverse.assign(total, -1);
    size_t off = 0;
    for (uint32_t i = 0; i < q; ++i) {
        map.forward.emplace_back(perm.begin() + off, perm.begin() + off + g[i]);
        for (int32_t p : map.forward.back()) map.inverse[p] = static_cast<int32_t>(i);
        off += g[i];
    }
    map.validate();
    return map;
}

double gamma(const LabelMap& map) {
    return static_cast<double>(map.total_pseudo()) / static_cast<double>(map.q);
}

int32_t demask(int32_t pseudo, const LabelMap& map) {
    if (pseudo < 0 || static_cast<size_t>(pseudo) >= map.inverse.size())
        throw std::out_of_range("demask: unknown pseudo id " + std::to_string(pseudo));
    return map.inverse[pseudo];
}

ExpandedDataset expand_dataset(const TensorF64& features, const std::vector<int32_t>& true_labels,
                               const LabelMap& map, double noise_sigma, uint64_t seed) {
    const uint32_t n = features.rows();
    const uint32_t d = features.cols();
    if (true_labels.size() != n) throw std::invalid_argument("expand_dataset: label count mismatch");

    std::vector<std::vector<uint32_t>> class_rows(map.q);
    for (uint32_t r = 0; r < n; ++r) {
        int32_t y = true_labels[r];
        if (y < 0 || static_cast<uint32_t>(y) >= map.q)
            throw std::out_of_range("expand_dataset: label " + std::to_string(y) + " outside [0, q)");
        class_rows[y].push_back(r);
    }
    for (uint32_t i = 0; i < map.q; ++i) {
        if (class_rows[i].empty())
            throw std::invalid_argument("expand_dataset: class " + std::to_string(i) + " is empty");
        if (class_rows[i].size() < map.g[i])
            throw std::invalid_argument("expand_dataset: class " + std::to_string(i) + " has fewer samples than g_i");
    }

    size_t total_out = 0;
    for (uint32_t i = 0; i < map.q; ++i) total_out += static_cast<size_t>(map.g[i]) * class_rows[i].size();

    ExpandedDataset out;
    out.features = TensorF64::zeros({static_cast<uint32_t>(total_out), d});
    out.pseudo_labels.reserve(total_out);
    out.provenance.reserve(total_out);

    CounterRng rng(mix_seed(seed, 0x4578706e644a7400ULL)); // "ExpndJt"
    size_t cursor = 0;
    auto emit = [&](uint32_t src_row, int32_t pseudo, int32_t aug_id) {
        const double* src = &features.values[static_cast<size_t>(src_row) * d];
        double* dst = &out.features.values[cursor * d];
        if (aug_id < 0) {
            std::copy(src, src + d, dst);
        } else {
            for (uint32_t c = 0; c < d; ++c) dst[c] = src[c] + noise_sigma * rng.normal();
        }
        out.pseudo_labels.push_back(pseudo);
        out.provenance.push_back({src_row, aug_id});
        ++cursor;
    };

    for (uint32_t i = 0; i < map.q; ++i) {
        const auto& rows = class_rows[i];
        const uint32_t gi = map.g[i];
        for (uint32_t j = 0; j < gi; ++j) {
            const int32_t pseudo = map.forward[i][j];
            std::vector<uint32_t> part;
            for (size_t k = j; k < rows.size(); k += gi) part.push_back(rows[k]);
            for (uint32_t r : part) emit(r, pseudo, -1);
            // Top up to the original class count with jittered copies of
            // this pseudo class's own partition.
            int32_t aug_id = 0;
            size_t k = 0;
            for (size_t need = rows.size() - part.size(); need > 0; --need) {
                emit(part[k], pseudo, aug_id++);
                k = (k + 1) % part.size();
            }
        }
    }
    return out;
}

std::string map_to_json(const LabelMap& map) {
    // perm lists pseudo ids slot by slot: g[0] slots for class 0, g[1] for
    // class 1, and so on.
    nlohmann::json j;
    j["q"] = map.q;
    j["g"] = map.g;
    std::vector<int32_t> perm;
    for (const auto& grp : map.forward) perm.insert(perm.end(), grp.begin(), grp.end());
    j["perm"] = perm;
    j["seed"] = map.seed;
    return j.dump(2);
}

LabelMap map_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    LabelMap map;
    map.q = j.at("q").get<uint32_t>();
    map.g = j.at("g").get<std::vector<uint32_t>>();
    map.seed = j.at("seed").get<uint64_t>();
    std::vector<int32_t> perm = j.at("perm").get<std::vector<int32_t>>();
    if (perm.size() != map.total_pseudo()) throw std::invalid_argument("map_from_json: perm size mismatch");
    map.inverse.assign(perm.size(), -1);
    size_t off = 0;
    for (uint32_t i = 0; i < map.q; ++i) {
        map.forward.emplace_back(perm.begin() + off, perm.begin() + off + map.g[i]);
        for (int32_t p : map.forward.back()) {
            if (p < 0 || static_cast<size_t>(p) >= perm.size())
                throw std::invalid_argument("map_from_json: bad pseudo id");
            map.inverse[p] = static_cast<int32_t>(i);
        }
        off += map.g[i];
    }
    map.validate();
    return map;
}

std::vector<std::vector<int32_t>> eval_groups(const std::vector<int32_t>& true_labels, const LabelMap& map) {
    std::vector<std::vector<int32_t>> groups;
    groups.reserve(true_labels.size());
    for (int32_t y : true_labels) {
        if (y < 0 || static_cast<uint32_t>(y) >= map.q)
            throw std::out_of_range("eval_groups: label out of range");
        groups.push_back(map.forward[y]);
    }
    return groups;
}

double demasked_accuracy(const TensorF64& pseudo_logits, const std::vector<int32_t>& true_labels,
                         const LabelMap& map) {
    const uint32_t n = pseudo_logits.rows();
    if (true_labels.size() != n) throw std::invalid_argument("demasked_accuracy: label count mismatch");
    if (pseudo_logits.cols() != map.total_pseudo())
        throw std::invalid_argument("demasked_accuracy: logit width != pseudo class count");
    size_t hits = 0;
    for (uint32_t r = 0; r < n; ++r) {
        const double* row = &pseudo_logits.values[static_cast<size_t>(r) * pseudo_logits.cols()];
        int32_t best = 0;
        for (uint32_t c = 1; c < pseudo_logits.cols(); ++c)
            if (row[c] > row[best]) best = static_cast<int32_t>(c);
        if (demask(best, map) == true_labels[r]) ++hits;
    }
    return static_cast<double>(hits) / n;
}

} // namespace clicooper::labels
