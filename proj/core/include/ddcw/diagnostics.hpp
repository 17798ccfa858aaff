#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddcw/estimator.hpp"

namespace ddcw {

// Random finite-state model: Dirichlet(1) kernel rows, iid uniform action
// contrasts, optional per-state utility level common to all actions (levels
// move values across states without moving choice probabilities), one-hot
// features, redrawn until the controlled chain is irreducible.
struct RandomModelConfig {
    int n_states = 20;
    int n_actions = 2;
    double beta = 0.9;
    double utility_scale = 1.0;
    double level_scale = 0.0;
    std::uint64_t seed = 1;
};

ModelSpec make_random_model(const RandomModelConfig& config);

// The fixed 20-state model used by the default experiment configs.
RandomModelConfig reference_model_config();

struct ToleranceConfig {
    double coverage_lo = 0.93;
    double coverage_hi = 0.97;
    double enumeration = 1e-8;
    double derivative_rel = 1e-6;
    double ratio_lo = 3.5;
    double ratio_hi = 4.5;
    double slope_min = 1.9;
    double dr_bias = 1e-8;
    double dr_ratio_lo = 3.2;
    double dr_ratio_hi = 4.8;
};

struct ExperimentConfig {
    std::optional<RandomModelConfig> generator;  // exactly one of generator/model_json
    std::string model_json;
    WeightConfig weight;
    std::vector<MomentVariant> variants{MomentVariant::Orthogonal};
    std::vector<std::int64_t> n_grid{2000};
    int folds = 5;
    int replications = 500;
    std::uint64_t master_seed = 1;
    double eta = 0.0;
    SamplingMode mode = SamplingMode::IIDFromStationary;
    int threads = 1;
    bool oracle_nuisances = false;
    FirstStageOptions first_stage;
    std::vector<double> eta_grid{0.1, 0.2, 0.4};
    int lemma_models = 50;
    ToleranceConfig tolerances;

    ModelSpec build_model() const;
    std::string to_json(int indent = 2) const;
    static ExperimentConfig from_json(const std::string& text);
    std::uint64_t hash() const { return fnv1a64(canonical_json()); }
    std::string canonical_json() const;
    void validate() const;
};

// --- coverage ----------------------------------------------------------------

struct CoverageCell {
    MomentVariant variant = MomentVariant::Orthogonal;
    std::int64_t n = 0;
    double eta = 0.0;
    double coverage = 0.0;
    double mean_bias = 0.0;
    double rmse = 0.0;
    double mean_se = 0.0;
    double sd_theta = 0.0;
    int replications = 0;
    int failures = 0;
    std::vector<std::string> flags;
    bool gating = false;  // orthogonal-family, unbiased-knob cells gate the exit code
    bool pass = true;
};

struct CoverageTable {
    double theta0 = 0.0;
    std::vector<CoverageCell> cells;
    std::string to_csv() const;
    std::string to_json(int indent = 2) const;
    bool all_pass() const;
};

CoverageTable run_coverage(const ExperimentConfig& config);

// --- orthogonality -----------------------------------------------------------

struct DirectionResult {
    std::string direction;  // "p", "f", "lambda", "joint"
    MomentVariant variant;
    double derivative = 0.0;        // central difference at r = 1e-4
    double phi_r = 0.0;             // phi(1e-2)
    double ratio1 = 0.0;            // phi(1e-2) / phi(5e-3)
    double ratio2 = 0.0;            // phi(5e-3) / phi(2.5e-3)
    bool exact_zero = false;        // |phi| below the enumeration floor at all r
    bool pass = true;
};

struct OrthogonalityReport {
    double theta0 = 0.0;
    double scale = 1.0;  // max(1, |theta0|)
    std::vector<DirectionResult> directions;
    double v_slope = 0.0;  // log-log rate of ||V(p_r) - V(p0)||_inf in r
    bool v_slope_pass = true;
    bool all_pass() const;
    std::string to_json(int indent = 2) const;
};

OrthogonalityReport run_orthogonality_check(const ModelSpec& model, const SolvedModel& solved,
                                            const WeightSpec& w, const ToleranceConfig& tol,
                                            std::uint64_t direction_seed = 77);

// Log-log slope of ||V(p_r)-V(p_0)||_inf along the mixture path toward a
// seeded alternative CCP matrix (halvings of r from 1e-2 to ~1e-4).
double ccp_value_rate_slope(const ModelSpec& model, const SolvedModel& solved,
                            std::uint64_t direction_seed);

// --- double robustness --------------------------------------------------------

struct DoubleRobustnessRow {
    double eta = 0.0;
    double bias_f_only = 0.0;       // (lambda_0, f_eta)
    double bias_lambda_only = 0.0;  // (lambda_eta, f_0)
    double bias_joint = 0.0;        // (lambda_eta, f_eta)
};

struct DoubleRobustnessReport {
    double theta0 = 0.0;
    std::vector<DoubleRobustnessRow> rows;
    std::vector<double> joint_ratios;  // bias_joint(2 eta)/bias_joint(eta) per doubling
    double plugin_contrast_ratio = 0.0;  // |bias plugin| / |bias orthogonal| at eta=0.2, w==1
    bool pass = true;
    std::string to_json(int indent = 2) const;
};

DoubleRobustnessReport run_double_robustness_check(const ModelSpec& model,
                                                   const SolvedModel& solved, const WeightSpec& w,
                                                   const std::vector<double>& eta_grid,
                                                   const ToleranceConfig& tol);

// --- lemma suite ---------------------------------------------------------------

struct LemmaSuiteReport {
    int n_models = 0;
    int contraction_pass = 0;
    int slope_pass = 0;
    int kress_pass = 0;
    int lipschitz_pass = 0;
    int solver_agreement_pass = 0;
    int lambda_identity_pass = 0;
    double worst_slope = 0.0;
    double worst_solver_gap = 0.0;
    double worst_lambda_residual = 0.0;
    double worst_kress_margin = 0.0;  // min(bound - observed)
    int slope_required = 0;           // pass threshold, n_models - 2
    bool all_pass() const;
    std::string to_json(int indent = 2) const;
};

LemmaSuiteReport run_lemma_suite(int n_models, std::uint64_t seed, const RandomModelConfig& base,
                                 const ToleranceConfig& tol);

// Deterministic indexed parallelism: task i writes only to slot i, so results
// are identical for any thread count.
void parallel_for_indexed(int n_tasks, int threads, const std::function<void(int)>& body);

}  // namespace ddcw
