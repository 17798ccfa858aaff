#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "ddcw/common.hpp"

namespace ddcw {

struct StationaryDistribution {
    Eigen::VectorXd pi;
    double residual = 0.0;  // ||pi'P - pi'||_inf
};

// Unique invariant law of a row-stochastic, irreducible P. Irreducibility is
// checked on the support graph; a reducible chain raises ReducibleChainError
// naming a state set disconnected from the rest.
StationaryDistribution stationary_distribution(const Eigen::MatrixXd& p_policy);

// Time-reversed kernel B(y|x) = P(x|y) pi(y) / pi(x). Rows are exactly
// renormalized after construction; a row sum off by more than `row_tol` is an
// error unless `renormalize` is set (estimated chains where pi is not exactly
// invariant for P).
struct BackwardKernel {
    Eigen::MatrixXd b;  // b(x, y) = B(y|x)
    int n() const { return static_cast<int>(b.rows()); }
};

BackwardKernel backward_kernel(const Eigen::MatrixXd& p_policy, const StationaryDistribution& pi,
                               bool renormalize = false, double row_tol = 1e-10,
                               double pi_floor = 1e-12);

// Discounted backward resolvent of the weight: solves (I - beta B) lambda = w,
// i.e. lambda(x) = sum_k beta^k E[w(x_{-k}) | x]. beta may be 0 (lambda = w).
struct LambdaVector {
    Eigen::VectorXd lambda;
    double residual = 0.0;  // ||w - lambda + beta B lambda||_inf
};

LambdaVector solve_lambda(const Eigen::VectorXd& w, const BackwardKernel& b, double beta);

// Residual report for the lambda recursion, plus the population check
// E_pi[(w(x') - lambda(x') + beta E[lambda(x)|x']) h(x')] over a battery of
// seeded random test functions h.
struct LambdaIdentityReport {
    double recursion_residual = 0.0;
    double max_population_residual = 0.0;
    int n_test_functions = 0;
};

LambdaIdentityReport verify_lambda_identity(const LambdaVector& lambda, const Eigen::VectorXd& w,
                                            const BackwardKernel& b, double beta,
                                            const Eigen::VectorXd& pi, int n_test_functions = 8,
                                            std::uint64_t seed = 20240901ull);

}  // namespace ddcw
