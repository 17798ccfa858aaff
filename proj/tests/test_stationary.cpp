#include <cmath>

#include "ddcw/rng.hpp"
#include "ddcw/stationary.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ddcw;

namespace {

// power-iteration oracle for the invariant law
Eigen::VectorXd power_iteration_oracle(const Eigen::MatrixXd& p, int iters = 400000,
                                       double tol = 1e-15) {
    const int n = static_cast<int>(p.rows());
    Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1.0 / n);
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd next = p.transpose() * pi;
        next /= next.sum();
        if ((next - pi).cwiseAbs().maxCoeff() < tol) return next;
        pi = next;
    }
    return pi;
}

}  // namespace

TEST_CASE("two-cycle stationary law is uniform") {
    Eigen::MatrixXd p(2, 2);
    p << 0, 1, 1, 0;
    const StationaryDistribution pi = stationary_distribution(p);
    CHECK(pi.pi(0) == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(pi.pi(1) == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(pi.residual <= 1e-12);
}

TEST_CASE("identical rows mix in one step") {
    Eigen::MatrixXd p(3, 3);
    p << 0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3;
    const StationaryDistribution pi = stationary_distribution(p);
    CHECK(pi.pi(0) == doctest::Approx(0.2).epsilon(1e-13));
    CHECK(pi.pi(1) == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(pi.pi(2) == doctest::Approx(0.3).epsilon(1e-13));
}

TEST_CASE("random chains match the power-iteration oracle") {
    SplitMix64 seeds(101);
    for (int trial = 0; trial < 5; ++trial) {
        const ModelSpec m = testutil::small_model(seeds.next(), 20, 2);
        const SolvedModel s = solve_model(m);
        CHECK(s.pi.residual <= 1e-10);
        const Eigen::VectorXd oracle = power_iteration_oracle(s.p_policy);
        CHECK((s.pi.pi - oracle).cwiseAbs().maxCoeff() <= 1e-11);
    }
}

TEST_CASE("reducible chain error names a disconnected block") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, 4);
    p(0, 1) = 1.0;
    p(1, 0) = 1.0;
    p(2, 3) = 1.0;
    p(3, 2) = 1.0;  // two disjoint 2-cycles
    try {
        stationary_distribution(p);
        FAIL("expected ReducibleChainError");
    } catch (const ReducibleChainError& e) {
        CHECK(e.component == std::vector<int>{2, 3});
        CHECK(doctest::String(e.what()).size() > 0);
    }
}

TEST_CASE("backward kernel of a reversible chain is the chain itself") {
    Eigen::MatrixXd p(3, 3);
    p << 0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5;  // symmetric => detailed balance
    const StationaryDistribution pi = stationary_distribution(p);
    const BackwardKernel b = backward_kernel(p, pi);
    CHECK((b.b - p).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward kernel of a cycle is the reverse cycle") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 3);
    p(0, 1) = 1.0;
    p(1, 2) = 1.0;
    p(2, 0) = 1.0;
    const StationaryDistribution pi = stationary_distribution(p);
    const BackwardKernel b = backward_kernel(p, pi);
    Eigen::MatrixXd reverse = Eigen::MatrixXd::Zero(3, 3);
    reverse(1, 0) = 1.0;
    reverse(2, 1) = 1.0;
    reverse(0, 2) = 1.0;
    CHECK((b.b - reverse).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward kernel rows sum to one") {
    const ModelSpec m = testutil::small_model(61, 15, 3);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    for (int x = 0; x < 15; ++x)
        CHECK(b.b.row(x).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward kernel rejects non-invariant pi unless told to renormalize") {
    const ModelSpec m = testutil::small_model(61, 6, 2);
    const SolvedModel s = solve_model(m);
    StationaryDistribution wrong = s.pi;
    wrong.pi(0) += 0.05;
    wrong.pi(1) -= 0.05;
    CHECK_THROWS_AS(backward_kernel(s.p_policy, wrong), InvalidArgumentError);
    const BackwardKernel b = backward_kernel(s.p_policy, wrong, /*renormalize=*/true);
    for (int x = 0; x < 6; ++x)
        CHECK(b.b.row(x).sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("backward kernel flags states with vanishing mass") {
    Eigen::MatrixXd p(2, 2);
    p << 0.5, 0.5, 0.5, 0.5;
    StationaryDistribution degenerate;
    degenerate.pi.resize(2);
    degenerate.pi << 1.0, 1e-13;
    try {
        backward_kernel(p, degenerate);
        FAIL("expected DegenerateStateError");
    } catch (const DegenerateStateError& e) {
        CHECK(e.state == 1);
    }
}

TEST_CASE("constant weight resolves to the geometric constant") {
    const ModelSpec m = testutil::small_model(67, 10, 2, 0.9);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    const LambdaVector l = solve_lambda(Eigen::VectorXd::Ones(10), b, 0.9);
    for (int x = 0; x < 10; ++x) CHECK(l.lambda(x) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(l.residual <= 1e-10);
}

TEST_CASE("zero discount truncates the series") {
    const ModelSpec m = testutil::small_model(67, 6, 2);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    Eigen::VectorXd w(6);
    w << 1, -2, 0.5, 3, -1, 0;
    const LambdaVector l = solve_lambda(w, b, 0.0);
    CHECK((l.lambda - w).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("lambda matches the truncated backward series oracle") {
    const ModelSpec m = testutil::small_model(71, 20, 2, 0.9);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    SplitMix64 rng(15);
    Eigen::VectorXd w(20);
    for (int x = 0; x < 20; ++x) w(x) = rng.uniform(-1.0, 1.0);
    const LambdaVector l = solve_lambda(w, b, 0.9);

    const double tol = 1e-11;
    const int terms = static_cast<int>(std::ceil(
        std::log(tol * (1.0 - 0.9) / w.cwiseAbs().maxCoeff()) / std::log(0.9)));
    Eigen::VectorXd series = w;
    Eigen::VectorXd term = w;
    for (int k = 0; k < terms; ++k) {
        term = 0.9 * (b.b * term);
        series += term;
    }
    CHECK((l.lambda - series).cwiseAbs().maxCoeff() <= tol);
    CHECK(l.lambda.cwiseAbs().maxCoeff() <=
          w.cwiseAbs().maxCoeff() / (1.0 - 0.9) * (1.0 + 1e-12));
}

TEST_CASE("lambda identity report and linear response to perturbation") {
    const ModelSpec m = testutil::small_model(73, 8, 2, 0.8);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    SplitMix64 rng(19);
    Eigen::VectorXd w(8);
    for (int x = 0; x < 8; ++x) w(x) = rng.uniform(-1.0, 1.0);
    const LambdaVector l = solve_lambda(w, b, 0.8);

    const LambdaIdentityReport rep = verify_lambda_identity(l, w, b, 0.8, s.pi.pi);
    CHECK(rep.recursion_residual <= 1e-10);
    CHECK(rep.max_population_residual <= 1e-10);

    Eigen::VectorXd delta(8);
    for (int x = 0; x < 8; ++x) delta(x) = rng.uniform(-0.1, 0.1);
    LambdaVector bumped = l;
    bumped.lambda += delta;
    const LambdaIdentityReport rep2 = verify_lambda_identity(bumped, w, b, 0.8, s.pi.pi);
    const double predicted =
        ((Eigen::MatrixXd::Identity(8, 8) - 0.8 * b.b) * delta).cwiseAbs().maxCoeff();
    CHECK(rep2.recursion_residual == doctest::Approx(predicted).epsilon(1e-9));
}

TEST_CASE("zero-bias identity holds as a matrix identity") {
    const ModelSpec m = testutil::small_model(79, 12, 2, 0.9);
    const SolvedModel s = solve_model(m);
    const BackwardKernel b = backward_kernel(s.p_policy, s.pi);
    SplitMix64 rng(23);
    Eigen::VectorXd w(12);
    for (int x = 0; x < 12; ++x) w(x) = rng.uniform(-1.0, 1.0);
    const LambdaVector l = solve_lambda(w, b, 0.9);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd dv(12);
        for (int x = 0; x < 12; ++x) dv(x) = rng.uniform(-1.0, 1.0);
        const double term =
            (s.pi.pi.array() * (w - l.lambda).array() * dv.array()).sum() +
            0.9 * (s.pi.pi.array() * l.lambda.array() * (s.p_policy * dv).array()).sum();
        CHECK(std::abs(term) <= 1e-10);
    }
}

TEST_CASE("stationary law matches long-run path averages") {
    const ModelSpec m = testutil::small_model(83, 10, 2);
    const SolvedModel s = solve_model(m);
    SplitMix64 rng(27);
    // simulate the policy chain directly for 1e6 steps
    Eigen::VectorXd h(10);
    for (int x = 0; x < 10; ++x) h(x) = rng.uniform(-1.0, 1.0);
    const int steps = 1000000;
    int x = 0;
    std::vector<double> batch_means;
    double acc = 0.0;
    int count = 0;
    const int batch = steps / 100;
    for (int t = 0; t < steps; ++t) {
        acc += h(x);
        if (++count == batch) {
            batch_means.push_back(acc / batch);
            acc = 0.0;
            count = 0;
        }
        double u = rng.uniform(), c = 0.0;
        for (int y = 0; y < 10; ++y) {
            c += s.p_policy(x, y);
            if (u < c || y == 9) {
                x = y;
                break;
            }
        }
    }
    double mean = 0.0;
    for (double v : batch_means) mean += v;
    mean /= static_cast<double>(batch_means.size());
    double sd = 0.0;
    for (double v : batch_means) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / batch_means.size() / batch_means.size());
    const double expected = (s.pi.pi.array() * h.array()).sum();
    CHECK(std::abs(mean - expected) <= 3.0 * sd + 1e-4);
}
