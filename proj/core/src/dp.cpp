#include "clicooper/dp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "clicooper/checkpoint.hpp"
#include "clicooper/rng.hpp"

namespace clicooper::dp {

double DpParams::noise_scale() const {
    validate();
    if (std::isinf(epsilon)) return 0.0;
    return sensitivity() / epsilon;
}

void DpParams::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("DpParams: epsilon must be > 0");
    if (!(clip_radius > 0.0)) throw std::invalid_argument("DpParams: clip radius must be > 0");
}

std::vector<double> clip_l1(const std::vector<double>& row, double S) {
    if (!(S > 0.0)) throw std::invalid_argument("clip_l1: S must be > 0");
    double norm = 0.0;
    for (double v : row) norm += std::abs(v);
    if (norm <= S) return row;
    const double scale = S / norm;
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] * scale;
    return out;
}

void clip_rows_l1(TensorF64& batch, double S) {
    if (!(S > 0.0)) throw std::invalid_argument("clip_rows_l1: S must be > 0");
    const uint32_t w = batch.cols();
    for (uint32_t r = 0; r < batch.rows(); ++r) {
        double* row = &batch.values[static_cast<size_t>(r) * w];
        double norm = 0.0;
        for (uint32_t c = 0; c < w; ++c) norm += std::abs(row[c]);
        if (norm > S) {
            const double scale = S / norm;
            for (uint32_t c = 0; c < w; ++c) row[c] *= scale;
        }
    }
}

DpActivationBatch laplace_perturb(const TensorF64& clipped, const DpParams& params, uint64_t seed) {
    params.validate();
    const double S = params.clip_radius;
    const uint32_t w = clipped.cols();
    for (uint32_t r = 0; r < clipped.rows(); ++r) {
        double norm = 0.0;
        for (uint32_t c = 0; c < w; ++c) norm += std::abs(clipped.at(r, c));
        if (norm > S * (1.0 + 1e-9))
            throw std::invalid_argument("laplace_perturb: row " + std::to_string(r) + " not clipped to S");
    }

    DpActivationBatch out;
    out.values = clipped;
    out.params = params;
    out.seed = seed;
    const double b = params.noise_scale();
    CounterRng rng(seed);
    for (double& v : out.values.values) v += rng.laplace(b);
    out.digest = canonical_digest(out.values);
    return out;
}

DpActivationBatch protect(const nn::Segment& client_segment, const labels::ExpandedDataset& data,
                          const DpParams& params, uint64_t seed) {
    if (!client_segment.frozen)
        throw std::logic_error("protect: client segment must be frozen before release");
    params.validate();
    TensorF64 acts = nn::segment_infer(client_segment, data.features);
    clip_rows_l1(acts, params.clip_radius);
    return laplace_perturb(acts, params, seed);
}

Digest32 canonical_digest(const TensorF64& t) {
    if (!t.all_finite()) throw std::invalid_argument("canonical_digest: non-finite values");
    Sha256 h;
    for (uint32_t d : t.shape) h.update_u32le(d);
    for (double v : t.values) h.update_f64le(v);
    return h.finalize();
}

void save_cache(const DpActivationBatch& cache, const std::string& path) {
    std::vector<uint8_t> b;
    b.push_back('C');
    b.push_back('L');
    b.push_back('D');
    b.push_back('P');
    io::put_f64(b, cache.params.epsilon);
    io::put_f64(b, cache.params.clip_radius);
    io::put_f64(b, cache.params.sensitivity());
    io::put_u64(b, cache.seed);
    io::encode_tensor(b, cache.values);
    b.insert(b.end(), cache.digest.begin(), cache.digest.end());
    io::write_file(path, b);
}

DpActivationBatch load_cache(const std::string& path) {
    std::vector<uint8_t> bytes = io::read_file(path);
    io::ByteReader r{bytes};
    if (r.u8() != 'C' || r.u8() != 'L' || r.u8() != 'D' || r.u8() != 'P')
        throw std::runtime_error("cache: bad magic");
    DpActivationBatch out;
    out.params.epsilon = r.f64();
    out.params.clip_radius = r.f64();
    const double delta1 = r.f64();
    if (std::abs(delta1 - out.params.sensitivity()) > 1e-12 * std::max(1.0, std::abs(delta1)))
        throw std::runtime_error("cache: stored sensitivity != 2*S");
    out.seed = r.u64();
    out.values = io::decode_tensor(r);
    for (auto& byte : out.digest) byte = r.u8();
    r.expect_end();
    if (canonical_digest(out.values) != out.digest)
        throw std::runtime_error("cache: digest mismatch, artifact tampered or corrupted");
    return out;
}

} // namespace clicooper::dp
