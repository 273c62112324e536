#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clicooper/labelspace.hpp"
#include "clicooper/nn.hpp"
#include "clicooper/sha256.hpp"
#include "clicooper/tensor.hpp"

namespace clicooper::dp {

struct DpParams {
    double epsilon = 0.0;     // privacy budget; +inf selects the zero-noise limit
    double clip_radius = 0.0; // S

    double sensitivity() const { return 2.0 * clip_radius; } // Delta_1 for l1-clipped rows
    double noise_scale() const;                              // b = Delta_1 / epsilon
    void validate() const;
};

/// The one activation artifact a data client ever releases: clipped,
/// perturbed, cached, and anchored by a canonical digest.
struct DpActivationBatch {
    TensorF64 values; // batch x width
    DpParams params;
    Digest32 digest{};
    uint64_t seed = 0;
};

/// Row unchanged inside the l1 ball of radius S, scaled onto its surface
/// otherwise.
std::vector<double> clip_l1(const std::vector<double>& row, double S);

/// Per-row in-place clip of a (batch x width) tensor.
void clip_rows_l1(TensorF64& batch, double S);

/// Adds i.i.d. Laplace(0, b) per coordinate, b = Delta_1/epsilon,
/// deterministic in `seed`. Rows must already be clipped.
DpActivationBatch laplace_perturb(const TensorF64& clipped, const DpParams& params, uint64_t seed);

/// One-shot client-side release: single forward pass of the expanded
/// dataset through the frozen client segment, clip, perturb, digest.
DpActivationBatch protect(const nn::Segment& client_segment, const labels::ExpandedDataset& data,
                          const DpParams& params, uint64_t seed);

/// SHA-256 over (shape dims as LE u32, values as LE IEEE-754 f64).
/// Non-finite values are rejected.
Digest32 canonical_digest(const TensorF64& t);

// Cache file ("CLDP"): magic, epsilon/clip_radius/sensitivity as f64, seed
// u64, tensor in the checkpoint tensor encoding, then the 32-byte digest,
// which is re-verified on load.
void save_cache(const DpActivationBatch& cache, const std::string& path);
DpActivationBatch load_cache(const std::string& path);

} // namespace clicooper::dp
