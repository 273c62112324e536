#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clicooper/tensor.hpp"

namespace clicooper::labels {

/// Secret one-to-many label map: q true classes fan out to sum(g) pseudo
/// classes whose ids are a seeded permutation. Held only by the data client
/// and authorized users; never crosses the transport.
struct LabelMap {
    uint32_t q = 0;
    std::vector<uint32_t> g;                    // per-class expansion factor, g[i] >= 1
    std::vector<std::vector<int32_t>> forward;  // true class -> pseudo ids
    std::vector<int32_t> inverse;               // pseudo id -> true class
    uint64_t seed = 0;

    uint32_t total_pseudo() const;
    void validate() const;
};

LabelMap build_label_map(uint32_t q, const std::vector<uint32_t>& g, uint64_t seed);

/// gamma = sum(g) / q, the average expansion factor.
double gamma(const LabelMap& map);

/// Pseudo id -> owning true class. Rejects unknown ids.
int32_t demask(int32_t pseudo, const LabelMap& map);

struct Provenance {
    uint32_t original_index; // row in the source dataset
    int32_t augmentation_id; // -1 for an original sample
};

struct ExpandedDataset {
    TensorF64 features; // n x d
    std::vector<int32_t> pseudo_labels;
    std::vector<Provenance> provenance;

    size_t size() const { return pseudo_labels.size(); }
};

/// Round-robin partition of each class across its pseudo ids, then each
/// pseudo class is topped up with Gaussian-jitter copies of its own
/// partition until it matches the original per-class count.
ExpandedDataset expand_dataset(const TensorF64& features, const std::vector<int32_t>& true_labels,
                               const LabelMap& map, double noise_sigma, uint64_t seed);

std::string map_to_json(const LabelMap& map);
LabelMap map_from_json(const std::string& json_text);

/// Per-sample acceptable pseudo ids (the sample's group) — what the data
/// client hands a verifier so accuracy can be gated without the map itself.
std::vector<std::vector<int32_t>> eval_groups(const std::vector<int32_t>& true_labels, const LabelMap& map);

/// Demasked accuracy of pseudo-logit predictions against true labels.
/// Predicting any pseudo id within the right group counts as correct.
double demasked_accuracy(const TensorF64& pseudo_logits, const std::vector<int32_t>& true_labels,
                         const LabelMap& map);

} // namespace clicooper::labels
