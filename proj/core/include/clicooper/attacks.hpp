#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "clicooper/labelspace.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/tensor.hpp"

namespace clicooper::attacks {

struct ClusterOutcome {
    std::vector<int32_t> assignments; // cluster id per sample; -1 marks noise
    uint32_t k_found = 0;
    double perfect_accuracy = 0.0; // filled by score_clusters
};

/// Lloyd's k-means with seeded k-means++ init for every k in k_range; the
/// cluster count is chosen by the best mean silhouette.
ClusterOutcome kmeans_auto(const TensorF64& X, const std::vector<uint32_t>& k_range, uint64_t seed);

/// Density clustering with eps picked by the k-distance elbow (k = min_pts)
/// unless a positive override is given. Noise points form no cluster.
ClusterOutcome dbscan(const TensorF64& X, uint32_t min_pts, double eps_override = 0.0);

/// Fraction of true-label groups recovered exactly: a group counts iff some
/// predicted cluster equals its sample set, no extras, nothing missing.
double perfect_cluster_accuracy(const std::vector<int32_t>& assignments,
                                const std::vector<std::vector<size_t>>& true_groups);

/// Convenience: computes perfect accuracy and stores it in the outcome.
void score_clusters(ClusterOutcome& outcome, const std::vector<std::vector<size_t>>& true_groups);

struct InversionOptions {
    uint32_t iters = 400;
    double lr_x = 0.4;  // step on the reconstructed inputs
    double lr_w = 1e-4; // step on the surrogate weights; 0 freezes them
    uint64_t seed = 1;
    const nn::Segment* init_surrogate = nullptr; // optional warm start
};

struct InversionOutcome {
    TensorF64 reconstructions; // m x input_dim
    nn::Segment surrogate;
    std::vector<double> loss_curve; // sum-of-squares fit per outer iteration
    std::vector<double> ssim_per_sample;
    double mean_ssim = 0.0;
    double mse = 0.0; // vs. targets when supplied
};

/// Joint optimization over reconstructed inputs and surrogate weights to
/// match the observed activations. The attacker knows the client
/// architecture, never its parameters. When `targets` is given (evaluation
/// side only) reconstructions are scored with SSIM on img_h x img_w
/// reshapes plus MSE.
InversionOutcome unsplit_invert(const TensorF64& observed, const std::vector<uint32_t>& surrogate_widths,
                                nn::Activation hidden, nn::Activation last, const InversionOptions& opt,
                                const TensorF64* targets = nullptr, uint32_t img_h = 0, uint32_t img_w = 0);

/// Plain SSIM over 8x8 sliding windows with C1=(0.01 L)^2, C2=(0.03 L)^2,
/// L taken as the joint dynamic range of the two images.
double ssim(const TensorF64& a, const TensorF64& b);

using PseudoApi = std::function<std::vector<int32_t>(const TensorF64&)>;

struct ExtractionOptions {
    std::vector<uint32_t> surrogate_widths; // {d, ..., q}; filled in by caller
    uint32_t epochs = 40;
    double lr = 0.1;
    double momentum = 0.9;
    uint32_t batch_size = 64;
    uint64_t seed = 1;
    const labels::LabelMap* oracle_map = nullptr; // control condition: true inverse map
};

struct ExtractionOutcome {
    nn::Segment surrogate;
    size_t pseudo_label_queries = 0;
    double surrogate_true_accuracy = 0.0;
    std::vector<int32_t> pseudo_to_true; // the mapping the attacker guessed
};

/// Black-box model extraction: label the probes through the pseudo-label
/// API, map each pseudo id to a true class (uniformly at random unless the
/// control-condition map is supplied), train a surrogate, and score it on
/// the true test set.
ExtractionOutcome extraction_attack(const PseudoApi& api, const TensorF64& probe_data, uint32_t q,
                                    uint32_t total_pseudo, const TensorF64& test_features,
                                    const std::vector<int32_t>& test_true_labels,
                                    const ExtractionOptions& opt);

} // namespace clicooper::attacks
