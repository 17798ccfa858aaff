#include "ddcw/first_stage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddcw/rng.hpp"
#include "json.hpp"

namespace ddcw {

FoldAssignment FoldAssignment::make(std::size_t n, int k, std::uint64_t seed) {
    if (k < 1) throw InvalidArgumentError("fold count must be >= 1");
    if (static_cast<std::size_t>(k) > n)
        throw InvalidArgumentError("fold count exceeds sample size");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next() % i);
        std::swap(order[i - 1], order[j]);
    }
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.resize(n);
    // contiguous blocks of the shuffled order; sizes differ by <= 1
    const std::size_t base = n / k, extra = n % k;
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) fa.fold_of[order[pos++]] = f;
    }
    return fa;
}

std::vector<std::vector<std::size_t>> FoldAssignment::fold_indices() const {
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t i = 0; i < fold_of.size(); ++i) out[fold_of[i]].push_back(i);
    return out;
}

const char* to_string(CcpMethod m) {
    return m == CcpMethod::FrequencyLaplace ? "frequency_laplace" : "penalized_logit";
}

CcpMethod ccp_method_from_string(const std::string& s) {
    if (s == "frequency_laplace") return CcpMethod::FrequencyLaplace;
    if (s == "penalized_logit") return CcpMethod::PenalizedLogit;
    throw ConfigError("unknown ccp method '" + s + "'");
}

namespace {

void check_indices(const Dataset& data, int n_states, int n_actions) {
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const auto& r = data.records[i];
        if (r.x >= n_states || r.x_next >= n_states || r.a >= n_actions)
            throw EstimationError("record " + std::to_string(i) + " index out of range (x=" +
                                  std::to_string(r.x) + ", a=" + std::to_string(r.a) +
                                  ", x_next=" + std::to_string(r.x_next) + ")");
    }
}

Eigen::MatrixXd ccp_counts(const Dataset& data, int n_states, int n_actions) {
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
    for (const auto& r : data.records) counts(r.x, r.a) += 1.0;
    return counts;
}

CCPMatrix ccp_frequency(const Eigen::MatrixXd& counts, double alpha) {
    const int n_states = static_cast<int>(counts.rows());
    const int n_actions = static_cast<int>(counts.cols());
    CCPMatrix p;
    p.p.resize(n_states, n_actions);
    for (int x = 0; x < n_states; ++x) {
        const double total = counts.row(x).sum();
        if (total == 0.0 && alpha == 0.0)
            throw EstimationError("state " + std::to_string(x) +
                                  " is unvisited and CCP smoothing is disabled (alpha = 0)");
        for (int a = 0; a < n_actions; ++a)
            p.p(x, a) = (counts(x, a) + alpha) / (total + n_actions * alpha);
    }
    return p;
}

// Ridge-penalized multinomial logit on state features, fit on aggregated
// counts by full-batch gradient descent with Armijo backtracking.
// Objective: -(1/n) sum_x sum_a count(x,a) log softmax_a(phi(x)'W) + ridge/2 ||W||_F^2.
CCPMatrix ccp_penalized_logit(const Eigen::MatrixXd& counts, const Eigen::MatrixXd& features,
                              const FirstStageOptions& opts) {
    const int n_states = static_cast<int>(counts.rows());
    const int n_actions = static_cast<int>(counts.cols());
    const int d = static_cast<int>(features.cols());
    const double n_total = counts.sum();
    if (n_total == 0.0) throw EstimationError("penalized logit: empty dataset");
    const Eigen::VectorXd state_total = counts.rowwise().sum();

    const auto probs_of = [&](const Eigen::MatrixXd& weights) {
        Eigen::MatrixXd scores = features * weights;  // n_states x J
        Eigen::MatrixXd probs(n_states, n_actions);
        for (int x = 0; x < n_states; ++x) {
            const double mx = scores.row(x).maxCoeff();
            Eigen::VectorXd e = (scores.row(x).transpose().array() - mx).exp();
            probs.row(x) = (e / e.sum()).transpose();
        }
        return probs;
    };
    const auto loss_of = [&](const Eigen::MatrixXd& weights) {
        Eigen::MatrixXd scores = features * weights;
        double nll = 0.0;
        for (int x = 0; x < n_states; ++x) {
            if (state_total(x) == 0.0) continue;
            const double mx = scores.row(x).maxCoeff();
            const double lse = mx + std::log((scores.row(x).array() - mx).exp().sum());
            for (int a = 0; a < n_actions; ++a)
                if (counts(x, a) > 0.0) nll -= counts(x, a) * (scores(x, a) - lse);
        }
        return nll / n_total + 0.5 * opts.ridge * weights.squaredNorm();
    };

    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(d, n_actions);
    double loss = loss_of(weights);
    double step = 1.0;
    int iter = 0;
    for (; iter < opts.logit_max_iter; ++iter) {
        const Eigen::MatrixXd probs = probs_of(weights);
        Eigen::MatrixXd grad =
            features.transpose() * (probs.array().colwise() * state_total.array()).matrix();
        grad -= features.transpose() * counts;
        grad /= n_total;
        grad += opts.ridge * weights;
        const double gnorm = grad.norm();
        if (gnorm <= opts.logit_tol) break;

        // Armijo backtracking with mild step growth on acceptance
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            const Eigen::MatrixXd trial = weights - step * grad;
            const double trial_loss = loss_of(trial);
            if (trial_loss <= loss - 1e-4 * step * gnorm * gnorm) {
                weights = trial;
                loss = trial_loss;
                step *= 1.25;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            throw ConvergenceError("penalized logit: line search failed at iteration " +
                                       std::to_string(iter),
                                   gnorm);
    }
    if (iter >= opts.logit_max_iter)
        throw ConvergenceError("penalized logit: gradient norm did not reach tolerance", 0.0);
    CCPMatrix p;
    p.p = probs_of(weights);
    return p;
}

}  // namespace

CCPMatrix estimate_ccp(const Dataset& data, int n_states, int n_actions,
                       const FirstStageOptions& opts, const Eigen::MatrixXd* features) {
    check_indices(data, n_states, n_actions);
    const Eigen::MatrixXd counts = ccp_counts(data, n_states, n_actions);
    if (opts.ccp_method == CcpMethod::FrequencyLaplace)
        return ccp_frequency(counts, opts.ccp_alpha);
    if (!features || features->rows() != n_states)
        throw EstimationError("penalized logit requires per-state features");
    return ccp_penalized_logit(counts, *features, opts);
}

TransitionKernel estimate_transition(const Dataset& data, int n_states, int n_actions,
                                     double alpha) {
    check_indices(data, n_states, n_actions);
    TransitionKernel kernel;
    kernel.f.assign(n_actions, Eigen::MatrixXd::Zero(n_states, n_states));
    for (const auto& r : data.records) kernel.f[r.a](r.x, r.x_next) += 1.0;
    for (int a = 0; a < n_actions; ++a) {
        for (int x = 0; x < n_states; ++x) {
            const double total = kernel.f[a].row(x).sum();
            if (total == 0.0 && alpha == 0.0) {
                // no smoothing and no data: leave a uniform row rather than zeros
                kernel.f[a].row(x).setConstant(1.0 / n_states);
                continue;
            }
            for (int y = 0; y < n_states; ++y)
                kernel.f[a](x, y) = (kernel.f[a](x, y) + alpha) / (total + n_states * alpha);
        }
    }
    return kernel;
}

CCPMatrix shrink_toward_uniform(const CCPMatrix& p, double eta) {
    CCPMatrix out = p;
    const double uniform = 1.0 / p.n_actions();
    out.p = (1.0 - eta) * p.p;
    out.p.array() += eta * uniform;
    return out;
}

TransitionKernel shrink_toward_uniform(const TransitionKernel& f, double eta) {
    TransitionKernel out = f;
    const double uniform = 1.0 / f.n_states();
    for (auto& m : out.f) {
        m *= (1.0 - eta);
        m.array() += eta * uniform;
    }
    return out;
}

namespace {

StationaryDistribution empirical_marginal(const Dataset& data, int n_states) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_states);
    for (const auto& r : data.records) counts(r.x) += 1.0;
    // light smoothing so no state carries exactly zero mass
    counts.array() += 0.5;
    StationaryDistribution pi;
    pi.pi = counts / counts.sum();
    pi.residual = std::numeric_limits<double>::quiet_NaN();  // not a fixed point by construction
    return pi;
}

}  // namespace

Eigen::VectorXd estimate_lambda(const CCPMatrix& p_hat, const TransitionKernel& f_hat,
                                const WeightSpec& w, double beta, const Dataset* data,
                                const FirstStageOptions& opts,
                                std::vector<std::string>* warnings) {
    const Eigen::MatrixXd p_policy = policy_transition_matrix(p_hat, f_hat);
    StationaryDistribution pi_hat;
    bool from_marginal = false;
    if (opts.lambda_empirical_marginal) {
        if (!data) throw EstimationError("empirical-marginal lambda requires the dataset");
        pi_hat = empirical_marginal(*data, static_cast<int>(p_policy.rows()));
        from_marginal = true;
    } else {
        try {
            pi_hat = stationary_distribution(p_policy);
        } catch (const ReducibleChainError&) {
            if (!data) throw;
            pi_hat = empirical_marginal(*data, static_cast<int>(p_policy.rows()));
            from_marginal = true;
            if (warnings)
                warnings->push_back("estimated chain reducible; lambda uses empirical marginal");
        }
    }
    if (from_marginal && warnings && opts.lambda_empirical_marginal)
        warnings->push_back("lambda uses empirical state marginal by request");
    const BackwardKernel b = backward_kernel(p_policy, pi_hat, /*renormalize=*/from_marginal);
    return solve_lambda(w.w, b, beta).lambda;
}

std::string NuisanceSet::Provenance::to_json() const {
    nlohmann::json j;
    j["ccp_estimator"] = ccp_estimator;
    j["ccp_alpha"] = ccp_alpha;
    j["transition_alpha"] = transition_alpha;
    j["ridge"] = ridge;
    j["shrink_eta"] = shrink_eta;
    j["oracle"] = oracle;
    j["warnings"] = warnings;
    return j.dump();
}

NuisanceSet assemble_nuisances(CCPMatrix p_hat, TransitionKernel f_hat, const ModelSpec& model,
                               const WeightSpec& w, const FirstStageOptions& opts,
                               const Dataset* data) {
    NuisanceSet g;
    g.provenance.ccp_estimator = to_string(opts.ccp_method);
    g.provenance.ccp_alpha = opts.ccp_alpha;
    g.provenance.transition_alpha = opts.transition_alpha;
    g.provenance.ridge = opts.ccp_method == CcpMethod::PenalizedLogit ? opts.ridge : 0.0;
    g.provenance.shrink_eta = opts.shrink_eta;
    if (opts.shrink_eta > 0.0) {
        p_hat = shrink_toward_uniform(p_hat, opts.shrink_eta);
        f_hat = shrink_toward_uniform(f_hat, opts.shrink_eta);
    }
    g.lambda_hat =
        estimate_lambda(p_hat, f_hat, w, model.beta, data, opts, &g.provenance.warnings);
    g.v_hat = solve_value_ccp(p_hat, f_hat, model.utility.u, model.beta,
                              SolveMethod::CCPLinearSolve, opts.value_solve, opts.clip);
    g.util_tilde = expected_current_utility(model.utility.u, p_hat, opts.clip);
    g.p_hat = std::move(p_hat);
    g.f_hat = std::move(f_hat);
    return g;
}

NuisanceSet oracle_nuisances(const ModelSpec& model, const SolvedModel& solved,
                             const WeightSpec& w, const FirstStageOptions& opts) {
    NuisanceSet g;
    g.p_hat = solved.ccp;
    g.f_hat = model.kernel;
    const BackwardKernel b = backward_kernel(solved.p_policy, solved.pi);
    g.lambda_hat = solve_lambda(w.w, b, model.beta).lambda;
    g.v_hat = solve_value_ccp(g.p_hat, g.f_hat, model.utility.u, model.beta,
                              SolveMethod::CCPLinearSolve, opts.value_solve, opts.clip);
    g.util_tilde = expected_current_utility(model.utility.u, g.p_hat, opts.clip);
    g.provenance.ccp_estimator = "oracle";
    g.provenance.oracle = true;
    return g;
}

std::vector<NuisanceSet> fit_folds(const Dataset& data, const ModelSpec& model,
                                   const WeightSpec& w, const FoldAssignment& folds,
                                   const FirstStageOptions& opts) {
    if (folds.fold_of.size() != data.records.size())
        throw ShapeError("fold assignment does not match dataset");
    std::vector<NuisanceSet> out;
    out.reserve(folds.k);
    for (int f = 0; f < folds.k; ++f) {
        Dataset complement;
        complement.seed = data.seed;
        complement.mode = data.mode;
        for (std::size_t i = 0; i < data.records.size(); ++i)
            if (folds.fold_of[i] != f || folds.k == 1) complement.records.push_back(data.records[i]);
        try {
            CCPMatrix p_hat = estimate_ccp(complement, model.n_states(), model.n_actions(), opts,
                                           &model.states.features);
            TransitionKernel f_hat = estimate_transition(complement, model.n_states(),
                                                         model.n_actions(), opts.transition_alpha);
            out.push_back(assemble_nuisances(std::move(p_hat), std::move(f_hat), model, w, opts,
                                             &complement));
        } catch (const Error& e) {
            throw EstimationError("fold " + std::to_string(f) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace ddcw
