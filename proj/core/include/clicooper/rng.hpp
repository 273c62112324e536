#pragma once

#include <cmath>
#include <cstdint>

namespace clicooper {

/// SplitMix64 finalizer. Used both as the counter-mode output function and
/// for composing sub-seeds.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

/// Counter-mode PRNG: the i-th output is a pure function of (seed, i), so
/// streams are reproducible across platforms and languages bit for bit.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed) : seed_(seed), counter_(0) {}

    uint64_t next_u64() { return mix64(seed_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; one pair of uniforms per two draws.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Laplace(0, b) via inverse CDF. b == 0 returns exactly 0.
    double laplace(double b) {
        if (b == 0.0) {
            next_u64(); // keep stream alignment with the noisy path
            return 0.0;
        }
        double v = uniform() - 0.5;
        double w = 1.0 - 2.0 * std::abs(v);
        if (w < 1e-300) w = 1e-300;
        double x = -b * std::log(w);
        return v < 0.0 ? -x : x;
    }

private:
    uint64_t seed_;
    uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace clicooper
