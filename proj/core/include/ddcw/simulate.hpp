#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddcw/bellman.hpp"
#include "ddcw/stationary.hpp"
#include "ddcw/weights.hpp"

namespace ddcw {

// Ground-truth quantities of a model: value fixed point, implied CCPs,
// policy-mixed chain and its invariant law. Solved once, reused everywhere.
struct SolvedModel {
    ValueFunction value;
    Eigen::MatrixXd q;  // choice-specific values
    CCPMatrix ccp;
    Eigen::MatrixXd p_policy;
    StationaryDistribution pi;
};

SolvedModel solve_model(const ModelSpec& model, const SolveOptions& opts = {1e-12, 200000});

enum class SamplingMode { IIDFromStationary, SingleLongPath };

const char* to_string(SamplingMode mode);
SamplingMode sampling_mode_from_string(const std::string& s);

struct Dataset {
    struct Record {
        std::int32_t x;
        std::int32_t a;
        std::int32_t x_next;
    };
    std::vector<Record> records;
    std::uint64_t seed = 0;
    SamplingMode mode = SamplingMode::IIDFromStationary;

    std::size_t n() const { return records.size(); }

    // CSV with header "x,a,x_next", zero-based integer columns. Paths ending
    // in ".gz" are transparently gzip-compressed/decompressed.
    void write_csv(const std::string& path) const;
    static Dataset read_csv(const std::string& path);

    // Metadata sidecar {seed, n, mode, model_hash} (+ optional manifest ref).
    std::string sidecar_json(const ModelSpec& model, const std::string& manifest = "") const;
};

// Draws n records from the stationary controlled process. IIDFromStationary
// samples x ~ pi exactly per record; SingleLongPath runs one chain with
// burn-in 10*ceil(1/(1-beta)) and records consecutive transitions.
// Deterministic given the seed.
Dataset simulate(const ModelSpec& model, std::int64_t n, std::uint64_t seed,
                 SamplingMode mode = SamplingMode::IIDFromStationary);
Dataset simulate(const ModelSpec& model, const SolvedModel& solved, std::int64_t n,
                 std::uint64_t seed, SamplingMode mode = SamplingMode::IIDFromStationary);

// theta_0 = sum_x pi(x) w(x) V(x), the estimand all experiments target.
double true_theta(const ModelSpec& model, const WeightSpec& w);
double true_theta(const SolvedModel& solved, const WeightSpec& w);

}  // namespace ddcw
