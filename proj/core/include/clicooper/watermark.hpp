#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "clicooper/dp.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/sha256.hpp"
#include "clicooper/tensor.hpp"

namespace clicooper::wm {

/// One element of the watermark chain. The chain hash binds the link to the
/// predecessor's anchor activation digest, the trainer index, the
/// publisher-fixed nonce, and the trainer identity; mark, key, and position
/// mask are deterministic functions of those inputs.
struct WatermarkLink {
    uint32_t index = 0;     // i, 1-based
    uint64_t nonce = 0;     // mu_i
    std::string identity;   // ID bytes
    Digest32 chain_hash{};  // H_i
    std::vector<uint8_t> mark;       // Lambda, B bits as 0/1 bytes
    TensorF64 key;                   // B x M
    std::vector<uint32_t> positions; // Z, M distinct flat indices
    double eta = 0.0;                // detection rate reached at embed time
};

struct EmbedConfig {
    double lambda = 0.01;    // regularizer weight; 0 is accepted and simply
                             // never reaches the goal (ablation path)
    double eta_goal = 0.99;  // in (0, 1]
    uint32_t max_rounds = 1000;
    double embed_lr = 0.05;
    double momentum = 0.0; // plain steps; momentum amplifies the regularizer
                           // into main-task damage
    uint32_t batch_size = 128;
    uint32_t selected = 0;   // M; 0 means min(4*B, param_count)
    uint32_t B = 512;
    uint64_t batch_seed = 7;

    void validate() const;
    uint32_t resolve_selected(size_t param_count) const;
};

/// Embedding could not reach eta_goal within max_rounds.
struct EmbedFailure : std::runtime_error {
    EmbedFailure(const std::string& what, double eta_reached, uint32_t rounds)
        : std::runtime_error(what), eta(eta_reached), rounds(rounds) {}
    double eta;
    uint32_t rounds;
};

/// M distinct indices into the flattened segment, drawn without replacement
/// from a PRNG seeded by the nonce alone.
std::vector<uint32_t> wm_position(uint64_t nonce, uint32_t selected, size_t param_count);

/// H_i = SHA-256(prev anchor digest || i as u32 LE || nonce as u64 LE || identity bytes).
Digest32 chain_hash(const Digest32& prev_anchor_digest, uint32_t index, uint64_t nonce,
                    const std::string& identity);

/// Mark bits: first B bits of the counter PRNG stream seeded by (H || "WM").
std::vector<uint8_t> wm_gen(const Digest32& chain_hash, uint32_t B);

/// Key: B x M standard normal draws from the stream seeded by (H || "KEY").
TensorF64 key_gen(const Digest32& chain_hash, uint32_t B, uint32_t selected);

/// The extraction function: bit j is 1 iff sigmoid(sum_m k[j][m] w[Z[m]])
/// >= 0.5, i.e. the projection is >= 0 (ties extract 1).
std::vector<uint8_t> project_extract(const nn::Segment& segment, const std::vector<uint32_t>& positions,
                                     const TensorF64& key);

struct RegularizerResult {
    double loss;                       // binary cross-entropy over the B projections
    std::vector<double> grad_selected; // d loss / d w[Z[m]], length M
};
RegularizerResult wm_regularizer(const nn::Segment& segment, const std::vector<uint32_t>& positions,
                                 const TensorF64& key, const std::vector<uint8_t>& mark);

/// eta = 1 - Hamming(extracted, expected)/B.
double detection_rate(const std::vector<uint8_t>& extracted, const std::vector<uint8_t>& expected);

struct EmbedOutcome {
    WatermarkLink link;
    uint32_t rounds = 0;
    double main_loss = 0.0; // last mini-batch main-task loss
};

/// Epoch-N+1 embedding for trainer `index` (1-based): repeated mini-batch
/// steps on main loss plus lambda * regularizer, updating only that
/// segment, until the detection rate reaches eta_goal. Links < index must
/// already be frozen; the segment is frozen on success.
EmbedOutcome embed(std::vector<nn::Segment>& segments, uint32_t index, const dp::DpActivationBatch& cache,
                   const std::vector<int32_t>& pseudo_labels, uint64_t nonce, const std::string& identity,
                   const EmbedConfig& cfg);

std::string link_public_json(const WatermarkLink& link);

} // namespace clicooper::wm
