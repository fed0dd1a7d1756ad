#pragma once

#include <cmath>
#include <cstdint>

namespace gsa {

// Counter-based generator: output i is a pure function of (seed, i), so fills
// are order-independent and reproducible across platforms. The mix is
// SplitMix64; gaussians come from a hand-rolled Box-Muller on top of it.
// std::mt19937 + std::normal_distribution would tie outputs to the standard
// library implementation, which this module forbids.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed) : seed_(seed) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derives an independent stream; used for per-size bench seeds and for
    // separating X / W_q / W_k / W_v / W_g fills.
    static uint64_t derive(uint64_t seed, uint64_t tag) {
        return mix(seed ^ mix(tag));
    }

    uint64_t bits(uint64_t counter) const { return mix(seed_ + counter * 0x9e3779b97f4a7c15ULL); }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double uniform(uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes counters 2i and 2i+1.
    double normal(uint64_t counter) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

private:
    uint64_t seed_;
};

}  // namespace gsa
