#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddcw/common.hpp"

namespace ddcw {

struct StateSpace {
    int n_states = 0;
    std::vector<std::string> labels;  // optional display names, may be empty
    Eigen::MatrixXd features;         // n_states x d, d >= 1; one-hot identity by default

    static StateSpace with_one_hot(int n);
    void validate() const;
};

struct ActionSet {
    int n_actions = 0;
    void validate() const;
};

// Per-period structural utilities u(x,a), optionally parameterized as
// u(x,a;delta) = phi(x,a)'delta with gradient[k](x,a) = d u / d delta_k.
struct UtilitySpec {
    Eigen::MatrixXd u;                      // n_states x J
    std::vector<Eigen::MatrixXd> gradient;  // one n_states x J matrix per delta dimension
    Eigen::VectorXd delta;

    bool parameterized() const { return !gradient.empty(); }
    void validate(int n_states, int n_actions) const;
};

enum class ShockFamily { IIDExtremeValueType1 };

struct ShockModel {
    ShockFamily family = ShockFamily::IIDExtremeValueType1;
    double euler_gamma = kEulerGamma;
};

// Conditional pmfs f(x'|x,a). f[a](x, x') = f(x'|x,a): each row of each
// per-action matrix is a pmf over successor states.
struct TransitionKernel {
    std::vector<Eigen::MatrixXd> f;

    int n_actions() const { return static_cast<int>(f.size()); }
    int n_states() const { return f.empty() ? 0 : static_cast<int>(f[0].rows()); }
    void validate(double tol = 1e-12) const;
};

// Choice probabilities p(a|x), rows over states.
struct CCPMatrix {
    Eigen::MatrixXd p;  // n_states x J

    int n_states() const { return static_cast<int>(p.rows()); }
    int n_actions() const { return static_cast<int>(p.cols()); }
    void validate(double tol = 1e-12) const;
    // Interiority: eps <= p(a|x) <= 1-eps everywhere.
    bool interior(double eps) const;
};

struct ModelSpec {
    StateSpace states;
    ActionSet actions;
    UtilitySpec utility;
    double beta = 0.0;
    TransitionKernel kernel;
    ShockModel shocks;

    int n_states() const { return states.n_states; }
    int n_actions() const { return actions.n_actions; }

    // Checks every invariant; throws on the first violation with indices.
    void validate() const;

    // JSON document {n_states, n_actions, beta, utilities, kernel, features,
    // ...}; see README for the full schema. Deserialization validates.
    std::string to_json(int indent = -1) const;
    static ModelSpec from_json(const std::string& text);

    // FNV-1a over the canonical (compact, sorted-key) JSON form.
    std::uint64_t hash() const;
};

// --- logit closed forms -----------------------------------------------------

// E max_a (v_a + eps_a) under iid extreme-value-1 shocks:
// logsumexp(v) + euler_gamma, max-subtracted for overflow safety.
double emax_logit(const Eigen::VectorXd& values_per_action);

// Softmax of choice-specific values; rows sum to one.
Eigen::VectorXd ccp_from_values(const Eigen::VectorXd& values_per_action);

// Expected shock conditional on the action being optimal: e(a;p) = gamma - log p(a|x).
Eigen::VectorXd expected_shock_logit(const Eigen::VectorXd& p_row, const ClipPolicy& clip = {});

// Expected current utility U~(x;p) = sum_a p(a|x) (u(x,a) + gamma - log p(a|x)).
// The log is clipped; the multiplier keeps the raw probability so that
// 0 * log 0 contributes exactly 0.
Eigen::VectorXd expected_current_utility(const Eigen::MatrixXd& u, const CCPMatrix& p,
                                         const ClipPolicy& clip = {});
Eigen::VectorXd expected_current_utility(const ModelSpec& model, const CCPMatrix& p,
                                         const ClipPolicy& clip = {});

}  // namespace ddcw
