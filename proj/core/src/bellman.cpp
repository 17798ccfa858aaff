#include "ddcw/bellman.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace ddcw {

ValueFunction solve_value_emax(const ModelSpec& model, const SolveOptions& opts) {
    if (opts.tol <= 0.0) throw InvalidArgumentError("solve_value_emax: tol must be positive");
    const int n = model.n_states();
    const int J = model.n_actions();
    const double beta = model.beta;

    // gap <= tol*(1-beta)/beta implies true error <= tol under contraction
    const double stop_gap = beta > 0.0 ? opts.tol * (1.0 - beta) / beta
                                       : opts.tol;

    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd next(n);
    Eigen::VectorXd q(J);
    double gap = std::numeric_limits<double>::infinity();
    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        for (int x = 0; x < n; ++x) {
            for (int a = 0; a < J; ++a)
                q(a) = model.utility.u(x, a) + beta * model.kernel.f[a].row(x).dot(v);
            next(x) = emax_logit(q);
        }
        gap = (next - v).cwiseAbs().maxCoeff();
        v.swap(next);
        if (gap <= stop_gap) break;
    }
    if (gap > stop_gap)
        throw ConvergenceError("solve_value_emax: no convergence after " +
                                   std::to_string(opts.max_iter) + " iterations, last gap " +
                                   format_double(gap),
                               gap);

    // post-hoc Bellman residual ||T(V) - V||_inf
    double res = 0.0;
    for (int x = 0; x < n; ++x) {
        for (int a = 0; a < J; ++a)
            q(a) = model.utility.u(x, a) + beta * model.kernel.f[a].row(x).dot(v);
        res = std::max(res, std::abs(emax_logit(q) - v(x)));
    }
    return ValueFunction{std::move(v), SolveMethod::EmaxFixedPoint, res, iter + 1};
}

Eigen::MatrixXd choice_specific_values(const Eigen::MatrixXd& u, const TransitionKernel& kernel,
                                       double beta, const Eigen::VectorXd& v) {
    if (u.rows() != v.size() || static_cast<int>(kernel.f.size()) != u.cols())
        throw ShapeError("choice_specific_values: shape mismatch");
    Eigen::MatrixXd q(u.rows(), u.cols());
    for (int a = 0; a < u.cols(); ++a) q.col(a) = u.col(a) + beta * (kernel.f[a] * v);
    return q;
}

Eigen::MatrixXd choice_specific_values(const ModelSpec& model, const ValueFunction& value) {
    return choice_specific_values(model.utility.u, model.kernel, model.beta, value.v);
}

Eigen::MatrixXd policy_transition_matrix(const CCPMatrix& p, const TransitionKernel& kernel) {
    const int n = kernel.n_states();
    if (p.n_states() != n || p.n_actions() != kernel.n_actions())
        throw ShapeError("policy_transition_matrix: CCP/kernel shape mismatch");
    Eigen::MatrixXd pp = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < kernel.n_actions(); ++a)
        pp += p.p.col(a).asDiagonal() * kernel.f[a];
    return pp;
}

ValueFunction solve_value_ccp(const CCPMatrix& p, const TransitionKernel& kernel,
                              const Eigen::MatrixXd& u, double beta, SolveMethod method,
                              const SolveOptions& opts, const ClipPolicy& clip) {
    if (beta < 0.0 || beta >= 1.0)
        throw InvalidArgumentError("solve_value_ccp: beta must lie in [0,1)");
    const Eigen::VectorXd util = expected_current_utility(u, p, clip);
    const Eigen::MatrixXd pp = policy_transition_matrix(p, kernel);
    const int n = static_cast<int>(pp.rows());

    Eigen::VectorXd v;
    int iterations = 1;
    if (method == SolveMethod::NeumannSeries) {
        v = util;
        Eigen::VectorXd term = util;
        const double stop = opts.tol * (1.0 - beta);
        int k = 0;
        for (; k < opts.max_iter; ++k) {
            term = beta * (pp * term);
            v += term;
            if (term.cwiseAbs().maxCoeff() < stop) break;
        }
        if (k >= opts.max_iter)
            throw ConvergenceError("solve_value_ccp: Neumann series did not converge",
                                   term.cwiseAbs().maxCoeff());
        iterations = k + 1;
    } else {
        Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - beta * pp;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        // cannot be singular for beta < 1 and row-stochastic pp; guarded anyway
        v = lu.solve(util);
        if (!v.allFinite())
            throw ConvergenceError("solve_value_ccp: singular linear system", 0.0);
        method = SolveMethod::CCPLinearSolve;
    }
    const double res = (v - (util + beta * (pp * v))).cwiseAbs().maxCoeff();
    return ValueFunction{std::move(v), method, res, iterations};
}

CCPOperator CCPOperator::from(const CCPMatrix& p, const TransitionKernel& kernel, double beta) {
    return CCPOperator{policy_transition_matrix(p, kernel), beta};
}

Eigen::MatrixXd CCPOperator::matrix() const {
    return Eigen::MatrixXd::Identity(n(), n()) - beta * p_policy;
}

namespace {
double inf_norm(const Eigen::MatrixXd& m) { return m.cwiseAbs().rowwise().sum().maxCoeff(); }
}  // namespace

OperatorDiagnostics operator_norm_diagnostics(const CCPOperator& a, const CCPOperator& a_hat) {
    if (a.n() != a_hat.n()) throw ShapeError("operator_norm_diagnostics: size mismatch");
    OperatorDiagnostics d;
    const Eigen::MatrixXd am = a.matrix();
    d.norm_i_minus_a = inf_norm(Eigen::MatrixXd::Identity(a.n(), a.n()) - am);
    d.inv_norm_bound = 1.0 / (1.0 - d.norm_i_minus_a);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(am);
    const Eigen::MatrixXd inv = lu.inverse();
    d.inv_norm_exact = inf_norm(inv);
    d.norm_inv_a_diff = inf_norm(inv * (a_hat.matrix() - am));
    d.kress_prefactor = d.norm_inv_a_diff < 1.0
                            ? d.inv_norm_exact / (1.0 - d.norm_inv_a_diff)
                            : std::numeric_limits<double>::infinity();
    return d;
}

std::string OperatorDiagnostics::to_json() const {
    nlohmann::json j;
    j["norm_i_minus_a"] = norm_i_minus_a;
    j["inv_norm_bound"] = inv_norm_bound;
    j["inv_norm_exact"] = inv_norm_exact;
    j["norm_inv_a_diff"] = norm_inv_a_diff;
    j["kress_prefactor"] = kress_prefactor;
    return j.dump();
}

double kress_error_bound(const CCPOperator& a, const CCPOperator& a_hat,
                         const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_hat,
                         const Eigen::VectorXd& phi) {
    const OperatorDiagnostics d = operator_norm_diagnostics(a, a_hat);
    if (!(d.norm_inv_a_diff < 1.0))
        throw BoundInapplicableError("kress_error_bound requires ||A^{-1}(Ahat-A)|| < 1, got " +
                                     format_double(d.norm_inv_a_diff));
    // defect Ahat*phi - xihat, written as (Ahat-A)phi - (xihat-xi) since A phi = xi
    const Eigen::VectorXd defect = (a_hat.matrix() - a.matrix()) * phi - (xi_hat - xi);
    return d.kress_prefactor * defect.cwiseAbs().maxCoeff();
}

}  // namespace ddcw
