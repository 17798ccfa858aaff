#include <cmath>

#include "ddcw/bellman.hpp"
#include "ddcw/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ddcw;

namespace {

// plain value-iteration oracle, fixed iteration count, no early stopping
Eigen::VectorXd value_iteration_oracle(const ModelSpec& m, int iters) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m.n_states());
    Eigen::VectorXd q(m.n_actions());
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd next(m.n_states());
        for (int x = 0; x < m.n_states(); ++x) {
            for (int a = 0; a < m.n_actions(); ++a)
                q(a) = m.utility.u(x, a) + m.beta * m.kernel.f[a].row(x).dot(v);
            next(x) = emax_logit(q);
        }
        v = next;
    }
    return v;
}

}  // namespace

TEST_CASE("constant-utility fixed point") {
    const double c = 0.7, beta = 0.9;
    const ModelSpec m = testutil::constant_model(c, 5, 6, 2, beta);
    const ValueFunction vf = solve_value_emax(m);
    const double expected = (c + std::log(2.0) + kEulerGamma) / (1.0 - beta);
    for (int x = 0; x < m.n_states(); ++x)
        CHECK(vf.v(x) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(vf.residual <= 1e-10);

    const Eigen::VectorXd oracle = value_iteration_oracle(m, 500);
    CHECK((vf.v - oracle).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("near-myopic limit") {
    ModelSpec m = testutil::constant_model(0.0, 5, 6, 2, 0.9);
    m.beta = 1e-10;
    const ValueFunction vf = solve_value_emax(m);
    for (int x = 0; x < m.n_states(); ++x)
        CHECK(vf.v(x) == doctest::Approx(std::log(2.0) + kEulerGamma).epsilon(1e-8));
}

TEST_CASE("emax solver converges with certified residual") {
    const ModelSpec m = testutil::small_model(21, 12, 3);
    const ValueFunction vf = solve_value_emax(m, {1e-10, 100000});
    CHECK(vf.residual <= 1e-10);
    CHECK((vf.v - value_iteration_oracle(m, 800)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("value function obeys the geometric norm bound") {
    SplitMix64 seeds(77);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelSpec m = testutil::small_model(seeds.next(), 10, 3);
        const ValueFunction vf = solve_value_emax(m);
        const double cap = (m.utility.u.cwiseAbs().maxCoeff() + std::log(3.0) + kEulerGamma) /
                           (1.0 - m.beta);
        CHECK(vf.v.cwiseAbs().maxCoeff() <= cap + 1e-9);
        CHECK(vf.v.allFinite());
    }
}

TEST_CASE("emax solver reports non-convergence with last residual") {
    const ModelSpec m = testutil::small_model(21, 8, 2);
    try {
        solve_value_emax(m, {1e-12, 3});
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.residual > 0.0);
    }
}

TEST_CASE("choice-specific values are consistent with the fixed point") {
    const ModelSpec m = testutil::small_model(23, 9, 3);
    const ValueFunction vf = solve_value_emax(m);
    const Eigen::MatrixXd q = choice_specific_values(m, vf);
    for (int x = 0; x < m.n_states(); ++x)
        CHECK(emax_logit(q.row(x).transpose()) == doctest::Approx(vf.v(x)).epsilon(1e-10));
}

TEST_CASE("choice-specific values reduce to utilities without discounting") {
    const ModelSpec m = testutil::small_model(23, 5, 2);
    const Eigen::VectorXd v = Eigen::VectorXd::Random(5);
    const Eigen::MatrixXd q = choice_specific_values(m.utility.u, m.kernel, 0.0, v);
    CHECK((q - m.utility.u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ccp representation agrees with the emax fixed point at the true ccps") {
    const ModelSpec m = testutil::small_model(29, 15, 2);
    const SolvedModel s = solve_model(m);
    const ValueFunction direct = solve_value_ccp(s.ccp, m.kernel, m.utility.u, m.beta);
    CHECK((direct.v - s.value.v).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(direct.residual <= 1e-10);
}

TEST_CASE("constant expected current utility solves to the geometric sum") {
    // u == c0 and uniform ccps give U~ = c0 + log J + gamma =: c, so V = c/(1-beta)
    const double c0 = -0.4, beta = 0.85;
    const ModelSpec m = testutil::constant_model(c0, 31, 5, 2, beta);
    CCPMatrix uniform;
    uniform.p = Eigen::MatrixXd::Constant(5, 2, 0.5);
    const ValueFunction vf = solve_value_ccp(uniform, m.kernel, m.utility.u, beta);
    const double expected = (c0 + std::log(2.0) + kEulerGamma) / (1.0 - beta);
    for (int x = 0; x < 5; ++x) CHECK(vf.v(x) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("neumann series and direct solve agree") {
    SplitMix64 seeds(37);
    for (int trial = 0; trial < 5; ++trial) {
        const ModelSpec m = testutil::small_model(seeds.next(), 20, 2);
        const SolvedModel s = solve_model(m);
        const Eigen::VectorXd direct =
            solve_value_ccp(s.ccp, m.kernel, m.utility.u, m.beta).v;
        const Eigen::VectorXd neumann =
            solve_value_ccp(s.ccp, m.kernel, m.utility.u, m.beta, SolveMethod::NeumannSeries).v;
        CHECK((direct - neumann).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("beta accepted on [0,1) in the ccp solve") {
    const ModelSpec m = testutil::small_model(3, 4, 2);
    const SolvedModel s = solve_model(m);
    const ValueFunction vf = solve_value_ccp(s.ccp, m.kernel, m.utility.u, 0.0);
    const Eigen::VectorXd util = expected_current_utility(m.utility.u, s.ccp);
    CHECK((vf.v - util).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK_THROWS_AS(solve_value_ccp(s.ccp, m.kernel, m.utility.u, 1.0), InvalidArgumentError);
}

TEST_CASE("operator diagnostics at the identity perturbation") {
    const ModelSpec m = testutil::small_model(41, 8, 2);
    const SolvedModel s = solve_model(m);
    const CCPOperator a = CCPOperator::from(s.ccp, m.kernel, m.beta);
    const OperatorDiagnostics d = operator_norm_diagnostics(a, a);
    CHECK(d.norm_i_minus_a == doctest::Approx(m.beta).epsilon(1e-12));
    CHECK(d.norm_inv_a_diff == doctest::Approx(0.0).epsilon(0).scale(1).epsilon(1e-12));
    CHECK(d.inv_norm_exact <= d.inv_norm_bound * (1.0 + 1e-12));
    CHECK(d.kress_prefactor == doctest::Approx(d.inv_norm_exact).epsilon(1e-12));
}

TEST_CASE("operator perturbation norm respects the resolvent bound") {
    const ModelSpec m = testutil::small_model(43, 10, 3);
    const SolvedModel s = solve_model(m);
    SplitMix64 rng(5);
    CCPMatrix p_hat;
    p_hat.p.resize(10, 3);
    for (int x = 0; x < 10; ++x) {
        Eigen::VectorXd q = s.q.row(x).transpose();
        for (int a = 0; a < 3; ++a) q(a) += 0.2 * rng.uniform(-1.0, 1.0);
        p_hat.p.row(x) = ccp_from_values(q).transpose();
    }
    const CCPOperator a = CCPOperator::from(s.ccp, m.kernel, m.beta);
    const CCPOperator a_hat = CCPOperator::from(p_hat, m.kernel, m.beta);
    const OperatorDiagnostics d = operator_norm_diagnostics(a, a_hat);
    double sum_dp = 0.0;
    for (int c = 0; c < 3; ++c)
        sum_dp += (p_hat.p.col(c) - s.ccp.p.col(c)).cwiseAbs().maxCoeff();
    CHECK(d.norm_inv_a_diff <= m.beta / (1.0 - m.beta) * sum_dp + 1e-12);
}

TEST_CASE("kress bound holds and vanishes at zero perturbation") {
    const ModelSpec m = testutil::small_model(47, 10, 2);
    const SolvedModel s = solve_model(m);
    const CCPOperator a = CCPOperator::from(s.ccp, m.kernel, m.beta);
    const Eigen::VectorXd xi = expected_current_utility(m.utility.u, s.ccp);
    const Eigen::VectorXd phi = solve_value_ccp(s.ccp, m.kernel, m.utility.u, m.beta).v;

    CHECK(kress_error_bound(a, a, xi, xi, phi) == doctest::Approx(0.0).scale(1).epsilon(1e-14));

    SplitMix64 rng(9);
    Eigen::MatrixXd dir(10, 2);
    for (int x = 0; x < 10; ++x)
        for (int c = 0; c < 2; ++c) dir(x, c) = rng.uniform(-1.0, 1.0);

    const auto perturbed = [&](double eps) {
        CCPMatrix p_hat;
        p_hat.p.resize(10, 2);
        for (int x = 0; x < 10; ++x)
            p_hat.p.row(x) =
                ccp_from_values((s.q.row(x).transpose() + eps * dir.row(x).transpose()).eval())
                    .transpose();
        return p_hat;
    };

    const auto bound_and_observed = [&](double eps) {
        const CCPMatrix p_hat = perturbed(eps);
        const CCPOperator a_hat = CCPOperator::from(p_hat, m.kernel, m.beta);
        const Eigen::VectorXd xi_hat = expected_current_utility(m.utility.u, p_hat);
        const Eigen::VectorXd phi_hat = solve_value_ccp(p_hat, m.kernel, m.utility.u, m.beta).v;
        const double bound = kress_error_bound(a, a_hat, xi, xi_hat, phi);
        const double observed = (phi_hat - phi).cwiseAbs().maxCoeff();
        return std::make_pair(bound, observed);
    };

    const auto [b1, o1] = bound_and_observed(1e-3);
    CHECK(o1 <= b1);
    // the defect is second order along ccp-consistent paths, so the bound
    // shrinks roughly fourfold when the perturbation halves
    const auto [b2, o2] = bound_and_observed(5e-4);
    CHECK(o2 <= b2);
    CHECK(b1 / b2 == doctest::Approx(4.0).epsilon(0.25));
}

TEST_CASE("kress bound refuses an out-of-range perturbation") {
    // two deterministic kernels moving in opposite directions, near-unit
    // discounting: ||A^{-1}(Ahat - A)|| far exceeds 1
    ModelSpec m;
    m.states = StateSpace::with_one_hot(2);
    m.actions.n_actions = 2;
    m.beta = 0.99;
    m.utility.u = Eigen::MatrixXd::Zero(2, 2);
    m.kernel.f.assign(2, Eigen::MatrixXd::Zero(2, 2));
    m.kernel.f[0] << 1, 0, 0, 1;
    m.kernel.f[1] << 0, 1, 1, 0;
    CCPMatrix p, p_hat;
    p.p.resize(2, 2);
    p.p << 1, 0, 1, 0;
    p_hat.p.resize(2, 2);
    p_hat.p << 0, 1, 0, 1;
    const CCPOperator a = CCPOperator::from(p, m.kernel, m.beta);
    const CCPOperator a_hat = CCPOperator::from(p_hat, m.kernel, m.beta);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(kress_error_bound(a, a_hat, zero, zero, zero), BoundInapplicableError);
}

TEST_CASE("policy transition matrix is row stochastic and contraction holds") {
    const ModelSpec m = testutil::small_model(53, 12, 2);
    const SolvedModel s = solve_model(m);
    for (int x = 0; x < 12; ++x)
        CHECK(s.p_policy.row(x).sum() == doctest::Approx(1.0).epsilon(1e-12));
    SplitMix64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd d(12);
        for (int x = 0; x < 12; ++x) d(x) = rng.uniform(-2.0, 2.0);
        CHECK((m.beta * (s.p_policy * d)).cwiseAbs().maxCoeff() <=
              m.beta * d.cwiseAbs().maxCoeff() + 1e-12);
    }
}

TEST_CASE("lipschitz in the transition kernel") {
    const ModelSpec m = testutil::small_model(59, 10, 2);
    const SolvedModel s = solve_model(m);
    SplitMix64 rng(8);
    TransitionKernel g;
    g.f.assign(2, Eigen::MatrixXd::Zero(10, 10));
    for (int a = 0; a < 2; ++a)
        for (int x = 0; x < 10; ++x) {
            Eigen::VectorXd row(10);
            double sum = 0.0;
            for (int y = 0; y < 10; ++y) {
                row(y) = rng.exponential();
                sum += row(y);
            }
            g.f[a].row(x) = (row / sum).transpose();
        }
    const Eigen::VectorXd v0 = solve_value_ccp(s.ccp, m.kernel, m.utility.u, m.beta).v;
    for (double delta : {0.05, 0.2, 0.5}) {
        TransitionKernel f_d = m.kernel;
        double max_l1 = 0.0;
        for (int a = 0; a < 2; ++a) {
            f_d.f[a] = (1 - delta) * m.kernel.f[a] + delta * g.f[a];
            for (int x = 0; x < 10; ++x)
                max_l1 =
                    std::max(max_l1, (f_d.f[a].row(x) - m.kernel.f[a].row(x)).cwiseAbs().sum());
        }
        const Eigen::VectorXd v_d = solve_value_ccp(s.ccp, f_d, m.utility.u, m.beta).v;
        CHECK((v_d - v0).cwiseAbs().maxCoeff() <=
              m.beta / (1.0 - m.beta) * v0.cwiseAbs().maxCoeff() * max_l1 + 1e-12);
    }
}
