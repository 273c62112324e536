#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clicooper/dp.hpp"
#include "clicooper/labelspace.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/tensor.hpp"
#include "clicooper/watermark.hpp"

namespace clicooper::verify {

/// Released model: frozen client encoder, the deterministic clip stage the
/// training cache went through, and the merged trainer stack.
struct AssembledModel {
    nn::Segment client;
    double clip_radius = 0.0;
    nn::Segment trainer_stack;

    /// Pseudo-class logits for a feature batch.
    TensorF64 predict(const TensorF64& features) const;
};

AssembledModel assemble(nn::Segment client, std::span<const nn::Segment> trainers, double clip_radius);

struct GateResult {
    bool pass = false;
    double accuracy = 0.0;
};

/// Accuracy gate in pseudo-label space: a prediction counts when it lands
/// in the sample's acceptable pseudo group (supplied by the data client,
/// who keeps the map itself secret).
GateResult accuracy_gate(const AssembledModel& model, const TensorF64& test_features,
                         const std::vector<std::vector<int32_t>>& acceptable_pseudo, double threshold);

/// Demasked variant for when the data client opts in with the map.
GateResult accuracy_gate(const AssembledModel& model, const TensorF64& test_features,
                         const std::vector<int32_t>& true_labels, const labels::LabelMap& map,
                         double threshold);

/// Manifest entry for one chain link: everything the publisher fixed.
struct LinkSpec {
    uint32_t index = 0;
    uint64_t nonce = 0;
    std::string identity;
    uint32_t selected = 0; // M
};

enum class FailStage : uint8_t { None = 0, CacheDigest = 1, Accuracy = 2, Link = 3 };

struct LinkCheck {
    uint32_t index = 0;
    double eta = 0.0;
    bool pass = false;
};

struct VerificationReport {
    bool success = false;
    FailStage fail_stage = FailStage::None;
    uint32_t fail_link = 0; // meaningful when fail_stage == Link
    bool accuracy_evaluated = false;
    double acc_main = 0.0;
    std::vector<LinkCheck> per_link; // fail-fast: links after a failure are unreported
    double eta_threshold = 0.0;
};

/// Algorithm: regenerate each link's chain hash from the predecessor anchor
/// (the cache for link 1), recompute mark/key/positions, extract, score,
/// and fail fast on the first link below the threshold. `link_ms`, when
/// given, receives per-link wall time in milliseconds.
VerificationReport verify_chain(std::span<const nn::Segment> trainer_ckpts,
                                const dp::DpActivationBatch& cache, const std::vector<LinkSpec>& links,
                                uint32_t B, double eta_threshold, std::vector<double>* link_ms = nullptr);

/// Full verification: accuracy gate first (when eval data is present), then
/// the chain.
VerificationReport verify_full(const AssembledModel& model, std::span<const nn::Segment> trainer_ckpts,
                               const dp::DpActivationBatch& cache, const std::vector<LinkSpec>& links,
                               uint32_t B, double eta_threshold, const TensorF64* test_features,
                               const std::vector<std::vector<int32_t>>* acceptable_pseudo,
                               double acc_threshold, std::vector<double>* link_ms = nullptr);

std::string report_to_json(const VerificationReport& report);
std::string render_report_table(const VerificationReport& report);

} // namespace clicooper::verify
