#pragma once

#include <Eigen/Dense>
#include <string>

#include "ddcw/model.hpp"

namespace ddcw {

enum class SolveMethod { EmaxFixedPoint, CCPLinearSolve, NeumannSeries };

struct ValueFunction {
    Eigen::VectorXd v;
    SolveMethod method = SolveMethod::EmaxFixedPoint;
    double residual = 0.0;  // sup-norm Bellman residual achieved
    int iterations = 0;
};

struct SolveOptions {
    double tol = 1e-10;
    int max_iter = 100000;
};

// Emax fixed point on the primitives: T(V)(x) = emax_a[u(x,a) + beta E_f[V|x,a]].
// Stops when the successive-iterate sup gap is <= tol*(1-beta)/beta so the
// reported tolerance bounds the true error by the contraction property.
ValueFunction solve_value_emax(const ModelSpec& model, const SolveOptions& opts = {});

// v(x,a) = u(x,a) + beta * sum_x' f(x'|x,a) V(x').
Eigen::MatrixXd choice_specific_values(const ModelSpec& model, const ValueFunction& value);
Eigen::MatrixXd choice_specific_values(const Eigen::MatrixXd& u, const TransitionKernel& kernel,
                                       double beta, const Eigen::VectorXd& v);

// Policy-mixed transition matrix P(x,x') = sum_a p(a|x) f(x'|x,a).
Eigen::MatrixXd policy_transition_matrix(const CCPMatrix& p, const TransitionKernel& kernel);

// CCP representation: solve (I - beta P_policy) V = U~(x;p), either by dense
// partial-pivot LU or by Neumann series truncated when the term norm drops
// below tol*(1-beta). beta may be 0 (the series has a single term).
ValueFunction solve_value_ccp(const CCPMatrix& p, const TransitionKernel& kernel,
                              const Eigen::MatrixXd& u, double beta,
                              SolveMethod method = SolveMethod::CCPLinearSolve,
                              const SolveOptions& opts = {}, const ClipPolicy& clip = {});

// The second-kind operator A: phi -> phi - beta P_policy phi, materialized.
struct CCPOperator {
    Eigen::MatrixXd p_policy;
    double beta = 0.0;

    static CCPOperator from(const CCPMatrix& p, const TransitionKernel& kernel, double beta);
    Eigen::MatrixXd matrix() const;  // I - beta * P_policy
    int n() const { return static_cast<int>(p_policy.rows()); }
};

struct OperatorDiagnostics {
    double norm_i_minus_a = 0.0;    // ||I - A||_inf, <= beta for valid (p,f)
    double inv_norm_bound = 0.0;    // 1 / (1 - ||I - A||_inf)
    double inv_norm_exact = 0.0;    // ||A^{-1}||_inf computed from the dense inverse
    double norm_inv_a_diff = 0.0;   // ||A^{-1}(Ahat - A)||_inf
    double kress_prefactor = 0.0;   // ||A^{-1}|| / (1 - ||A^{-1}(Ahat-A)||); inf if >= 1
    std::string to_json() const;
};

OperatorDiagnostics operator_norm_diagnostics(const CCPOperator& a, const CCPOperator& a_hat);

// Kress-style perturbation bound for second-kind equations: with A phi = xi
// and Ahat phihat = xihat, returns
//   ||A^{-1}|| / (1 - ||A^{-1}(Ahat-A)||) * ||(Ahat-A) phi + xihat - xi||_inf,
// an upper bound on ||phihat - phi||_inf. Requires ||A^{-1}(Ahat-A)|| < 1.
double kress_error_bound(const CCPOperator& a, const CCPOperator& a_hat,
                         const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_hat,
                         const Eigen::VectorXd& phi);

}  // namespace ddcw
