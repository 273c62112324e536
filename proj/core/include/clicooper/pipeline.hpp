#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clicooper/dp.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/tensor.hpp"
#include "clicooper/transport.hpp"

namespace clicooper::pipeline {

struct WmPlan {
    uint32_t B = 512;          // watermark length
    double lambda = 0.05;      // regularizer weight
    double eta_goal = 0.99;    // embedding target detection rate
    uint32_t max_rounds = 200; // embedding round cap
    double embed_lr = 0.05;
    uint32_t embed_batch = 128;
};

/// Everything the negotiation phase fixes: topology, hyper-parameters,
/// and per-role seeds. Interface tensor shapes follow from split_widths.
struct ExperimentPlan {
    uint32_t n = 1;                                  // trainer count
    std::vector<std::vector<uint32_t>> split_widths; // per trainer {in, ..., out}

    uint32_t epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    uint32_t batch_size = 128;
    bool early_stop = false; // stop when epoch-mean loss improves < 1e-4 for 3 epochs in a row

    dp::DpParams dpp{5.0, 1.0};
    uint32_t q = 0;              // true class count
    std::vector<uint32_t> g;     // expansion factors (defines the pseudo class count)

    WmPlan wm;

    uint64_t shuffle_seed = 1;
    std::vector<uint64_t> trainer_seeds;
};

struct Topology {
    uint32_t n = 0;
    std::vector<uint32_t> interface_widths; // n+1 entries: T1 input .. Tn output
    uint32_t pseudo_classes = 0;
};

/// Validates split points and fixes the execution order T1 -> ... -> Tn.
Topology negotiate(const ExperimentPlan& plan);

/// Deterministic per-epoch sample permutation shared by the roles that
/// slice the cache and the labels.
std::vector<size_t> epoch_permutation(uint64_t shuffle_seed, uint32_t epoch, size_t n);

/// Fresh trainer segments in plan order (hidden ReLU, final logits layer
/// identity), deterministic in the per-trainer seeds.
std::vector<nn::Segment> init_trainer_segments(const ExperimentPlan& plan);

struct TrainingResult {
    std::vector<nn::Segment> segments;
    std::vector<double> epoch_losses;
    uint32_t epochs_run = 0;
};

/// Runs the relay protocol over the given transport: T1 consumes the cached
/// DP activations, activations flow downstream, gradients upstream, Tn owns
/// the pseudo labels and the loss.
TrainingResult run_training(const ExperimentPlan& plan, const dp::DpActivationBatch& cache,
                            const std::vector<int32_t>& pseudo_labels, Transport& net);

/// Convenience overload on the deterministic in-process transport.
TrainingResult run_training(const ExperimentPlan& plan, const dp::DpActivationBatch& cache,
                            const std::vector<int32_t>& pseudo_labels);

/// Forward of the full cached DP batch through the first `segments.size()`
/// frozen segments; anchor 0 (empty span) is the cache itself. The
/// canonical digest of anchor i seeds chain link i+1.
TensorF64 anchor_activation(std::span<const nn::Segment> segments, const dp::DpActivationBatch& cache);

struct LatencyEstimate {
    std::vector<double> per_link; // seconds
    double total = 0.0;
};

/// Analytic per-iteration communication time: size/R + theta per link.
LatencyEstimate estimate_latency(const std::vector<double>& interface_bytes, double bandwidth_bytes_per_s,
                                 double per_link_overhead_s);

} // namespace clicooper::pipeline
