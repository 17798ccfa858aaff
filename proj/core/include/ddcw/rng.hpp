#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "ddcw/common.hpp"

namespace ddcw {

// SplitMix64 (Steele, Lea & Flood). Counter-based: state advances by the
// golden-ratio increment and each output is a bijective mix of the counter,
// so distinct seeds give non-overlapping streams.
//
// Stream discipline, recorded in run manifests: replication (or fold, or
// worker) k draws from SplitMix64 seeded with substream(master, k) =
// mix(master + GOLDEN * (k + 1)). All randomness in an experiment derives
// from one master seed; results are independent of scheduling.
class SplitMix64 {
  public:
    using result_type = std::uint64_t;
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static std::uint64_t substream(std::uint64_t master, std::uint64_t k) {
        return mix(master + kGolden * (k + 1));
    }

    std::uint64_t next() {
        state_ += kGolden;
        return mix(state_);
    }

    std::uint64_t operator()() { return next(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~0ull; }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Exponential(1) via inversion; used by the Dirichlet sampler.
    double exponential() {
        double u = uniform();
        return -std::log1p(-u);
    }

    // Index sampled from a pmf by linear CDF scan. The pmf must sum to ~1;
    // any tail mass from rounding goes to the last index.
    int sample_pmf(std::span<const double> pmf) {
        double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < pmf.size(); ++i) {
            acc += pmf[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(pmf.size()) - 1;
    }

  private:
    std::uint64_t state_;
};

inline const char* rng_algorithm_name() { return "splitmix64"; }

}  // namespace ddcw
