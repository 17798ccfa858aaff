#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddcw {

inline constexpr const char* kVersion = "0.1.0";

// Euler-Mascheroni constant, 16 significant digits.
inline constexpr double kEulerGamma = 0.5772156649015329;

inline constexpr double kZ975 = 1.959964;

// Base type for all library errors. Subclasses signal which contract failed;
// what() always carries indices or diagnostics usable in CLI messages.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgumentError : Error {
    using Error::Error;
};

// Log/division of a probability at or below the hard floor with clipping disabled.
struct ProbabilityDomainError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Iterative solver ran out of iterations; carries the last residual seen.
struct ConvergenceError : Error {
    double residual;
    ConvergenceError(const std::string& msg, double res) : Error(msg), residual(res) {}
};

// Chain support is not strongly connected; `component` is a state set
// unreachable from (or not reaching) the rest.
struct ReducibleChainError : Error {
    std::vector<int> component;
    ReducibleChainError(const std::string& msg, std::vector<int> comp)
        : Error(msg), component(std::move(comp)) {}
};

// Stationary mass below floor at some state.
struct DegenerateStateError : Error {
    int state;
    DegenerateStateError(const std::string& msg, int s) : Error(msg), state(s) {}
};

// Counterfactual weight would divide by a zero-probability state.
struct SupportViolationError : Error {
    using Error::Error;
};

struct UnsupportedVariantError : Error {
    using Error::Error;
};

// Kress-style bound requested where ||A^{-1}(Ahat-A)|| >= 1.
struct BoundInapplicableError : Error {
    using Error::Error;
};

struct EstimationError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Clipping policy for log/division on probabilities. Estimated CCPs can sit on
// the simplex boundary in finite samples; interior-CCP assumptions are enforced
// by clipping into [floor, 1-floor] before any transform. With clipping
// disabled, probabilities at or below the hard floor raise ProbabilityDomainError.
struct ClipPolicy {
    bool enabled = true;
    double floor = 1e-9;
    static constexpr double kHardFloor = 1e-12;

    double apply(double p) const {
        if (enabled) {
            if (p < floor) return floor;
            if (p > 1.0 - floor) return 1.0 - floor;
            return p;
        }
        if (p < kHardFloor)
            throw ProbabilityDomainError("probability " + std::to_string(p) +
                                         " below hard floor with clipping disabled");
        return p;
    }
};

// Deterministic pairwise (cascade) summation. Fixed association order, so the
// result is identical for any thread count as long as the input order is fixed.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double v : xs) s += v;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

// FNV-1a 64-bit, used for config/model fingerprints in manifests and sidecars.
inline std::uint64_t fnv1a64(std::span<const char> bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(std::span<const char>(s.data(), s.size()));
}

// Shortest %.17g rendering: round-trippable and byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string hex_u64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace ddcw
