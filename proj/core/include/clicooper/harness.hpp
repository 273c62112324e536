#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clicooper/attacks.hpp"
#include "clicooper/dp.hpp"
#include "clicooper/labelspace.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/pipeline.hpp"
#include "clicooper/tensor.hpp"
#include "clicooper/verifier.hpp"
#include "clicooper/watermark.hpp"

namespace clicooper::harness {

/// Synthetic desk-scale data: q classes in `dim` dimensions (reshapeable to
/// an image grid), each class marked by a few large spike coordinates on a
/// textured background. Spikes keep the class signal concentrated, which is
/// what makes the DP release trainable at realistic budgets.
struct DataConfig {
    uint32_t q = 4;
    uint32_t dim = 64;
    uint32_t per_class = 200;
    uint32_t test_per_class = 50;
    uint32_t spike_count = 2;
    double spike_value = 10.0;
    double mean_texture = 0.3;
    double class_sigma = 0.25;
    uint64_t seed = 11;
};

struct EncoderConfig {
    std::vector<uint32_t> widths{64, 64};
    std::string init = "near_identity"; // or "random"
    std::string activation = "identity"; // or "relu"
    uint64_t seed = 14;
};

struct RunConfig {
    DataConfig data;

    std::vector<uint32_t> g{2, 2, 2, 2};
    double aug_sigma = 0.2;
    uint64_t label_seed = 12;
    uint64_t expand_seed = 15;

    // The release boundary is normalized: rows clipped onto the unit l1
    // ball keep activations, gradients, and noise on the same O(1) scale.
    // At this dimensionality epsilon = 10 is the operating point where the
    // protected run still trains to full accuracy; 5 and 2 are the
    // stronger-noise evaluation points used by the attack experiments.
    double epsilon = 10.0; // +inf selects the zero-noise limit
    double clip_radius = 1.0;
    uint64_t dp_seed = 13;

    EncoderConfig encoder;

    std::vector<std::vector<uint32_t>> trainer_widths{{64, 48}, {48, 32}, {32, 24, 8}};
    std::vector<uint64_t> trainer_seeds{21, 22, 23};

    uint32_t epochs = 15;
    double lr = 0.05;
    double momentum = 0.9;
    uint32_t batch_size = 128;
    uint64_t shuffle_seed = 31;
    bool early_stop = false;

    uint32_t wm_B = 512;
    double wm_lambda = 0.01;
    double wm_eta_goal = 0.99;
    uint32_t wm_max_rounds = 1000;
    double wm_embed_lr = 0.05;
    double wm_momentum = 0.0;
    uint32_t wm_embed_batch = 128;
    uint32_t wm_selected = 0; // 0: min(4B, segment params)
    uint64_t wm_embed_seed = 41;
    std::vector<uint64_t> nonces{101, 102, 103};
    std::vector<std::string> identities{"T1", "T2", "T3"};

    double verify_eta_g = 0.95;
    double verify_acc_threshold = 0.90;
    bool demask_optin = true;

    std::string transport = "inproc"; // or "tcp"

    void validate() const;
    pipeline::ExperimentPlan to_plan() const;
    uint32_t pseudo_classes() const;
};

RunConfig default_config();
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

struct Blobs {
    TensorF64 train_x;
    std::vector<int32_t> train_y;
    TensorF64 test_x;
    std::vector<int32_t> test_y;
};
Blobs make_blobs(const DataConfig& cfg);

nn::Segment make_encoder(const EncoderConfig& cfg); // returned frozen

struct RunRecord {
    std::string run_id;
    RunConfig config;
    uint32_t epochs_run = 0;
    double final_train_loss = 0.0;
    double train_seconds = 0.0;
    std::vector<double> embed_ms;  // per link
    std::vector<double> verify_ms; // per link
    double acc_pre_embed = 0.0;    // demasked, before the watermark epoch
    double acc_post_embed = 0.0;   // demasked, on the released checkpoints
    std::vector<double> eta_per_link;
    bool verify_success = false;
    std::string fail_stage = "none";
};

/// expand -> protect -> negotiate -> relay training -> chained embedding ->
/// verification, persisting checkpoints, cache, manifest, report, and a
/// metrics row. Any stage failure aborts with a stage-tagged message.
RunRecord run_experiment(const RunConfig& cfg, const std::string& out_dir);

/// One run per value of the axis ("epsilon", "gamma", or "B").
std::vector<RunRecord> sweep(const RunConfig& base, const std::string& axis,
                             const std::vector<double>& values, const std::string& out_dir);

/// Rebuilds the expansion-factor vector for a target average gamma.
std::vector<uint32_t> gamma_to_g(double gamma_value, uint32_t q);

// Versioned metrics schema; `report` renders rows without recomputing.
std::string metrics_csv_header();
std::string metrics_csv_row(const RunRecord& r);
std::string render_metrics_table(const std::string& csv_text);

// ---- Attack experiment procedures (shared by the CLI and the test suite).

struct ClusterTrialResult {
    double baseline_accuracy = 0.0;  // unprotected activations, true groups
    double protected_accuracy = 0.0; // DP cache rows, expanded groups
    uint32_t baseline_k = 0;
    uint32_t protected_k = 0;
};
ClusterTrialResult cluster_experiment(const RunConfig& cfg, uint64_t trial_seed, bool use_dbscan = false);

struct InversionTrialResult {
    std::vector<double> epsilons;  // +inf first by convention
    std::vector<double> mean_ssim; // per epsilon
    std::vector<double> mse;       // per epsilon
};
InversionTrialResult inversion_experiment(const RunConfig& cfg, const std::vector<double>& epsilons,
                                          uint32_t num_targets, uint64_t trial_seed);

struct ExtractionTrialResult {
    double victim_demasked_accuracy = 0.0;
    double surrogate_accuracy = 0.0; // random pseudo-to-true guess
    double control_accuracy = 0.0;  // attacker granted the true inverse map
    size_t queries = 0;
};
ExtractionTrialResult extraction_experiment(const RunConfig& cfg, uint64_t trial_seed, bool with_control);

} // namespace clicooper::harness
