#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddcw/simulate.hpp"

namespace ddcw {

// K-fold partition; sizes differ by at most one. Deterministic given seed.
struct FoldAssignment {
    int k = 0;
    std::vector<int> fold_of;  // record index -> fold id
    std::uint64_t seed = 0;

    static FoldAssignment make(std::size_t n, int k, std::uint64_t seed);
    std::vector<std::vector<std::size_t>> fold_indices() const;
};

enum class CcpMethod { FrequencyLaplace, PenalizedLogit };

const char* to_string(CcpMethod m);
CcpMethod ccp_method_from_string(const std::string& s);

struct FirstStageOptions {
    CcpMethod ccp_method = CcpMethod::FrequencyLaplace;
    double ccp_alpha = 0.5;         // Laplace smoothing for CCP counts
    double transition_alpha = 0.1;  // Laplace smoothing for transition counts
    double ridge = 1e-4;            // penalized-logit ridge strength
    double logit_tol = 1e-8;        // gradient-norm stopping rule
    int logit_max_iter = 200000;
    double shrink_eta = 0.0;        // deliberate-bias knob: mix toward uniform
    bool lambda_empirical_marginal = false;
    SolveOptions value_solve;
    ClipPolicy clip;
};

// Estimated nuisance triple {p_hat, f_hat, lambda_hat} plus the value function
// implied by (p_hat, f_hat).
struct NuisanceSet {
    CCPMatrix p_hat;
    TransitionKernel f_hat;
    Eigen::VectorXd lambda_hat;
    ValueFunction v_hat;
    Eigen::VectorXd util_tilde;  // U~(x; p_hat), computed from the structural utility

    struct Provenance {
        std::string ccp_estimator;
        double ccp_alpha = 0.0;
        double transition_alpha = 0.0;
        double ridge = 0.0;
        double shrink_eta = 0.0;
        bool oracle = false;
        std::vector<std::string> warnings;
        std::string to_json() const;
    } provenance;
};

// p_hat(a|x) = (count(x,a) + alpha) / (count(x) + J*alpha) for FrequencyLaplace;
// ridge-penalized multinomial logit on state features (full-batch gradient
// descent with backtracking) for PenalizedLogit. With alpha == 0 an unvisited
// state is an estimation error naming the state.
CCPMatrix estimate_ccp(const Dataset& data, int n_states, int n_actions,
                       const FirstStageOptions& opts,
                       const Eigen::MatrixXd* features = nullptr);

// f_hat(x'|x,a) = (count(x,a,x') + alpha) / (count(x,a) + n_states*alpha).
TransitionKernel estimate_transition(const Dataset& data, int n_states, int n_actions,
                                     double alpha);

// Plug-in lambda: stationary law and backward kernel of the estimated chain,
// then the resolvent solve. If the estimated chain is reducible, falls back to
// the empirical state marginal (flagged in *warnings). The
// lambda_empirical_marginal option selects the empirical-marginal route directly.
Eigen::VectorXd estimate_lambda(const CCPMatrix& p_hat, const TransitionKernel& f_hat,
                                const WeightSpec& w, double beta, const Dataset* data,
                                const FirstStageOptions& opts,
                                std::vector<std::string>* warnings = nullptr);

// Mix a CCP matrix / kernel toward uniform with strength eta (bias knob).
CCPMatrix shrink_toward_uniform(const CCPMatrix& p, double eta);
TransitionKernel shrink_toward_uniform(const TransitionKernel& f, double eta);

// Assembles a full NuisanceSet from estimated (p_hat, f_hat): lambda via
// estimate_lambda and V via solve_value_ccp with the model's utility.
NuisanceSet assemble_nuisances(CCPMatrix p_hat, TransitionKernel f_hat, const ModelSpec& model,
                               const WeightSpec& w, const FirstStageOptions& opts,
                               const Dataset* data = nullptr);

// Exact nuisances gamma_0 from the solved model.
NuisanceSet oracle_nuisances(const ModelSpec& model, const SolvedModel& solved,
                             const WeightSpec& w, const FirstStageOptions& opts = {});

// Per-fold nuisances, each fit on the fold's complement. Deterministic given
// (data, folds). Estimation failures propagate with the fold id attached.
std::vector<NuisanceSet> fit_folds(const Dataset& data, const ModelSpec& model,
                                   const WeightSpec& w, const FoldAssignment& folds,
                                   const FirstStageOptions& opts);

}  // namespace ddcw
