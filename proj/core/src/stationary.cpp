#include "ddcw/stationary.hpp"

#include <cmath>
#include <vector>

#include "ddcw/rng.hpp"

namespace ddcw {

namespace {

// Reachable set from `start` along edges with positive mass.
std::vector<bool> reachable(const Eigen::MatrixXd& p, bool transpose, int start) {
    const int n = static_cast<int>(p.rows());
    std::vector<bool> seen(n, false);
    std::vector<int> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
        const int x = stack.back();
        stack.pop_back();
        for (int y = 0; y < n; ++y) {
            const double mass = transpose ? p(y, x) : p(x, y);
            if (mass > 0.0 && !seen[y]) {
                seen[y] = true;
                stack.push_back(y);
            }
        }
    }
    return seen;
}

}  // namespace

StationaryDistribution stationary_distribution(const Eigen::MatrixXd& p_policy) {
    const int n = static_cast<int>(p_policy.rows());
    if (p_policy.cols() != n || n < 1) throw ShapeError("stationary_distribution: P must be square");
    for (int x = 0; x < n; ++x) {
        double sum = 0.0;
        for (int y = 0; y < n; ++y) {
            if (p_policy(x, y) < 0.0)
                throw InvalidArgumentError("P[" + std::to_string(x) + "][" + std::to_string(y) +
                                           "] is negative");
            sum += p_policy(x, y);
        }
        if (std::abs(sum - 1.0) > 1e-10)
            throw InvalidArgumentError("P row " + std::to_string(x) + " sums to " +
                                       format_double(sum));
    }

    // strong connectivity through state 0
    const auto fwd = reachable(p_policy, false, 0);
    const auto bwd = reachable(p_policy, true, 0);
    std::vector<int> cut;
    for (int x = 0; x < n; ++x)
        if (!fwd[x] || !bwd[x]) cut.push_back(x);
    if (!cut.empty()) {
        std::string msg = "chain is reducible; states {";
        for (std::size_t i = 0; i < cut.size(); ++i)
            msg += (i ? "," : "") + std::to_string(cut[i]);
        msg += "} are disconnected from state 0";
        throw ReducibleChainError(msg, std::move(cut));
    }

    // Stacked least squares: (P' - I) pi = 0 plus the normalization row 1'pi = 1.
    Eigen::MatrixXd m(n + 1, n);
    m.topRows(n) = p_policy.transpose() - Eigen::MatrixXd::Identity(n, n);
    m.row(n).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    rhs(n) = 1.0;
    Eigen::VectorXd pi = m.colPivHouseholderQr().solve(rhs);

    pi = pi.cwiseMax(0.0);
    pi /= pi.sum();
    const double residual = (pi.transpose() * p_policy - pi.transpose()).cwiseAbs().maxCoeff();
    return StationaryDistribution{std::move(pi), residual};
}

BackwardKernel backward_kernel(const Eigen::MatrixXd& p_policy, const StationaryDistribution& pi,
                               bool renormalize, double row_tol, double pi_floor) {
    const int n = static_cast<int>(p_policy.rows());
    if (pi.pi.size() != n) throw ShapeError("backward_kernel: pi size mismatch");
    for (int x = 0; x < n; ++x)
        if (pi.pi(x) < pi_floor)
            throw DegenerateStateError("backward_kernel: pi(" + std::to_string(x) + ") = " +
                                           format_double(pi.pi(x)) + " below floor",
                                       x);

    Eigen::MatrixXd b(n, n);
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) b(x, y) = p_policy(y, x) * pi.pi(y) / pi.pi(x);

    for (int x = 0; x < n; ++x) {
        const double sum = b.row(x).sum();
        if (!renormalize && std::abs(sum - 1.0) > row_tol)
            throw InvalidArgumentError("backward_kernel: row " + std::to_string(x) + " sums to " +
                                       format_double(sum) +
                                       "; pi is not invariant for P within tolerance");
        b.row(x) /= sum;
    }
    return BackwardKernel{std::move(b)};
}

LambdaVector solve_lambda(const Eigen::VectorXd& w, const BackwardKernel& b, double beta) {
    if (w.size() != b.n()) throw ShapeError("solve_lambda: shape mismatch");
    if (!w.allFinite()) throw InvalidArgumentError("solve_lambda: non-finite weight");
    if (beta < 0.0 || beta >= 1.0) throw InvalidArgumentError("solve_lambda: beta must lie in [0,1)");
    const int n = b.n();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - beta * b.b;
    Eigen::VectorXd lambda = Eigen::PartialPivLU<Eigen::MatrixXd>(a).solve(w);
    if (!lambda.allFinite())
        throw ConvergenceError("solve_lambda: singular system", 0.0);
    const double res = (w - lambda + beta * (b.b * lambda)).cwiseAbs().maxCoeff();
    return LambdaVector{std::move(lambda), res};
}

LambdaIdentityReport verify_lambda_identity(const LambdaVector& lambda, const Eigen::VectorXd& w,
                                            const BackwardKernel& b, double beta,
                                            const Eigen::VectorXd& pi, int n_test_functions,
                                            std::uint64_t seed) {
    if (w.size() != b.n() || lambda.lambda.size() != b.n() || pi.size() != b.n())
        throw ShapeError("verify_lambda_identity: shape mismatch");
    LambdaIdentityReport rep;
    const Eigen::VectorXd defect = w - lambda.lambda + beta * (b.b * lambda.lambda);
    rep.recursion_residual = defect.cwiseAbs().maxCoeff();
    rep.n_test_functions = n_test_functions;
    SplitMix64 rng(seed);
    for (int k = 0; k < n_test_functions; ++k) {
        Eigen::VectorXd h(b.n());
        for (int x = 0; x < b.n(); ++x) h(x) = rng.uniform(-1.0, 1.0);
        const double val = (pi.array() * defect.array() * h.array()).sum();
        rep.max_population_residual = std::max(rep.max_population_residual, std::abs(val));
    }
    return rep;
}

}  // namespace ddcw
