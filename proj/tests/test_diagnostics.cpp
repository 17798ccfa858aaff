#include <atomic>

#include "ddcw/diagnostics.hpp"
#include "ddcw/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ddcw;

TEST_CASE("random model generator is deterministic and valid") {
    RandomModelConfig cfg;
    cfg.n_states = 12;
    cfg.n_actions = 3;
    cfg.seed = 31;
    const ModelSpec a = make_random_model(cfg);
    const ModelSpec b = make_random_model(cfg);
    CHECK(a.hash() == b.hash());
    CHECK_NOTHROW(a.validate());
    CHECK(a.utility.u.cwiseAbs().maxCoeff() <= 1.0);

    cfg.seed = 32;
    const ModelSpec c = make_random_model(cfg);
    CHECK(c.hash() != a.hash());

    cfg.level_scale = 4.0;
    const ModelSpec lvl = make_random_model(cfg);
    CHECK(lvl.utility.u.cwiseAbs().maxCoeff() > 1.0);
    // levels are common across actions: action contrasts stay within +-2
    CHECK((lvl.utility.u.col(0) - lvl.utility.u.col(1)).cwiseAbs().maxCoeff() <= 2.0);
}

TEST_CASE("experiment config round trips through JSON") {
    ExperimentConfig c;
    c.generator = RandomModelConfig{10, 2, 0.85, 1.0, 2.0, 99};
    c.weight.kind = WeightKind::CounterfactualMap;
    c.weight.map = {1, 2, 3, 4, 5, 6, 7, 8, 9, 0};
    c.variants = {MomentVariant::Orthogonal, MomentVariant::PlugIn};
    c.n_grid = {500, 2000};
    c.folds = 4;
    c.replications = 77;
    c.master_seed = 123456789ull;
    c.eta = 0.15;
    c.threads = 3;
    c.first_stage.ccp_alpha = 0.25;
    c.tolerances.coverage_lo = 0.9;

    const std::string text = c.to_json();
    const ExperimentConfig back = ExperimentConfig::from_json(text);
    CHECK(back.to_json() == text);  // parse -> serialize -> parse is identity
    CHECK(back.hash() == c.hash());
    CHECK(back.weight.map == c.weight.map);
    CHECK(back.variants == c.variants);
    CHECK(back.eta == c.eta);
    CHECK(back.first_stage.ccp_alpha == 0.25);
    CHECK(back.tolerances.coverage_lo == 0.9);
}

TEST_CASE("experiment config rejects unknown or invalid fields") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json("{\"typo_field\": 1}"),
                         doctest::Contains("typo_field"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{\"n_grid\": []}"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{\"n_grid\": [100, 50]}"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{\"replications\": 0}"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{\"eta\": 1.5}"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("not json"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json("{\"first_stage\": {\"bogus\": 1}}"), ConfigError);
    // inline model and generator are mutually exclusive
    const ModelSpec m = testutil::small_model(3, 4, 2);
    const std::string both = std::string("{\"model\": ") + m.to_json() +
                             ", \"generator\": {\"seed\": 1}}";
    CHECK_THROWS_AS(ExperimentConfig::from_json(both), ConfigError);
}

TEST_CASE("config with an inline model builds that model") {
    const ModelSpec m = testutil::small_model(41, 5, 2);
    ExperimentConfig c;
    c.model_json = m.to_json();
    const ModelSpec built = c.build_model();
    CHECK(built.hash() == m.hash());
}

TEST_CASE("parallel_for_indexed is schedule independent and propagates errors") {
    std::vector<int> out(200, -1);
    parallel_for_indexed(200, 8, [&](int i) { out[i] = i * i; });
    for (int i = 0; i < 200; ++i) CHECK(out[i] == i * i);

    CHECK_THROWS_AS(parallel_for_indexed(50, 4,
                                         [&](int i) {
                                             if (i == 33) throw InvalidArgumentError("boom");
                                         }),
                    InvalidArgumentError);
}

TEST_CASE("coverage table is identical for any thread count") {
    ExperimentConfig c;
    c.generator = RandomModelConfig{10, 2, 0.9, 1.0, 0.0, 7};
    c.variants = {MomentVariant::Orthogonal, MomentVariant::PlugIn};
    c.n_grid = {400};
    c.replications = 40;
    c.folds = 3;
    c.master_seed = 5;

    c.threads = 1;
    const CoverageTable t1 = run_coverage(c);
    c.threads = 7;
    const CoverageTable t7 = run_coverage(c);
    CHECK(t1.to_csv() == t7.to_csv());
    CHECK(t1.to_json() == t7.to_json());
    CHECK(t1.cells.size() == 2);
    for (const auto& cell : t1.cells) CHECK(cell.failures == 0);
}

TEST_CASE("oracle-nuisance coverage sits near the nominal level") {
    ExperimentConfig c;
    c.generator = RandomModelConfig{10, 2, 0.9, 1.0, 0.0, 11};
    c.variants = {MomentVariant::Orthogonal};
    c.n_grid = {2000};
    c.replications = 120;
    c.folds = 5;
    c.master_seed = 2;
    c.oracle_nuisances = true;
    c.threads = 4;
    const CoverageTable t = run_coverage(c);
    REQUIRE(t.cells.size() == 1);
    // binomial 3-sigma band around 0.95 at R=120 is about +-0.06
    CHECK(t.cells[0].coverage >= 0.88);
    CHECK(t.cells[0].coverage <= 1.0);
    CHECK(t.cells[0].gating);
}

TEST_CASE("coverage rejects the structural variant") {
    ExperimentConfig c;
    c.variants = {MomentVariant::StructuralProjected};
    CHECK_THROWS_AS(run_coverage(c), ConfigError);
}

TEST_CASE("replication failures are isolated and counted") {
    ExperimentConfig c;
    c.generator = RandomModelConfig{8, 2, 0.9, 1.0, 0.0, 3};
    c.variants = {MomentVariant::Orthogonal};
    // tiny samples with no smoothing leave some states unvisited in some folds
    c.n_grid = {40};
    c.replications = 30;
    c.folds = 5;
    c.master_seed = 17;
    c.first_stage.ccp_alpha = 0.0;
    const CoverageTable t = run_coverage(c);
    REQUIRE(t.cells.size() == 1);
    CHECK(t.cells[0].failures > 0);
    CHECK(t.cells[0].failures < c.replications);  // the rest still produced estimates
    CHECK(!t.cells[0].flags.empty());
    CHECK(t.cells[0].flags[0] == "failure_rate_above_1pct");
}

TEST_CASE("orthogonality check passes on a small model") {
    const ModelSpec m = testutil::small_model(51, 8, 2);
    const SolvedModel s = solve_model(m);
    std::vector<int> t(8);
    for (int x = 0; x < 8; ++x) t[x] = (x + 1) % 8;
    const WeightSpec w = build_counterfactual_weight(t, s.pi);
    const OrthogonalityReport rep = run_orthogonality_check(m, s, w, ToleranceConfig{});
    CHECK(rep.all_pass());
    CHECK(rep.v_slope >= 1.9);
    // the plug-in functional must show a first-order f-direction response
    bool saw_plugin_f = false;
    for (const auto& d : rep.directions)
        if (d.variant == MomentVariant::PlugIn && d.direction == "f") {
            saw_plugin_f = true;
            CHECK(std::abs(d.derivative) > 1e-3 * rep.scale);
        }
    CHECK(saw_plugin_f);
    // report serializes
    CHECK(rep.to_json().find("v_slope") != std::string::npos);
}

TEST_CASE("zero direction leaves the population moment exactly flat") {
    const ModelSpec m = testutil::small_model(51, 6, 2);
    const SolvedModel s = solve_model(m);
    const WeightSpec w = build_constant_weight(m.states);
    const NuisanceSet g0 = oracle_nuisances(m, s, w);
    const double base =
        population_moment_mean(s, m.kernel, g0, MomentVariant::Orthogonal, w, m.beta);
    // "perturbing" along the null direction reproduces gamma_0 for every r
    for (double r : {1e-4, -1e-4, 1e-2}) {
        NuisanceSet g = oracle_nuisances(m, s, w);
        g.p_hat.p = s.ccp.p + r * (s.ccp.p - s.ccp.p);
        const double val =
            population_moment_mean(s, m.kernel, g, MomentVariant::Orthogonal, w, m.beta);
        CHECK(val == base);
    }
}

TEST_CASE("double robustness biases vanish identically at eta = 0") {
    const ModelSpec m = testutil::small_model(53, 6, 2);
    const SolvedModel s = solve_model(m);
    std::vector<int> t(6);
    for (int x = 0; x < 6; ++x) t[x] = (x + 2) % 6;
    const WeightSpec w = build_counterfactual_weight(t, s.pi);
    const DoubleRobustnessReport rep =
        run_double_robustness_check(m, s, w, {1e-9}, ToleranceConfig{});
    REQUIRE(rep.rows.size() == 1);
    CHECK(std::abs(rep.rows[0].bias_f_only) <= 1e-10);
    CHECK(std::abs(rep.rows[0].bias_lambda_only) <= 1e-10);
    CHECK(std::abs(rep.rows[0].bias_joint) <= 1e-10);
}

TEST_CASE("double robustness check on a small model") {
    const ModelSpec m = testutil::small_model(53, 8, 2);
    const SolvedModel s = solve_model(m);
    std::vector<int> t(8);
    for (int x = 0; x < 8; ++x) t[x] = (x * 3) % 8;
    const WeightSpec w = build_counterfactual_weight(t, s.pi);
    const DoubleRobustnessReport rep =
        run_double_robustness_check(m, s, w, {0.1, 0.2, 0.4}, ToleranceConfig{});
    CHECK(rep.pass);
    for (const auto& row : rep.rows) {
        CHECK(std::abs(row.bias_f_only) <= 1e-8);
        CHECK(std::abs(row.bias_lambda_only) <= 1e-8);
    }
    REQUIRE(rep.joint_ratios.size() == 2);
    CHECK(rep.joint_ratios[0] >= 3.2);
    CHECK(rep.joint_ratios[0] <= 4.8);
}

TEST_CASE("lemma suite passes across random models") {
    const LemmaSuiteReport rep = run_lemma_suite(12, 99, RandomModelConfig{10, 2, 0.9}, {});
    CHECK(rep.n_models == 12);
    CHECK(rep.contraction_pass == 12);
    CHECK(rep.kress_pass == 12);
    CHECK(rep.lipschitz_pass == 12);
    CHECK(rep.solver_agreement_pass == 12);
    CHECK(rep.lambda_identity_pass == 12);
    CHECK(rep.slope_pass >= 10);
    CHECK(rep.worst_solver_gap <= 1e-8);
    CHECK(rep.worst_lambda_residual <= 1e-10);
    CHECK(rep.worst_kress_margin >= 0.0);
    CHECK(rep.all_pass());
}

TEST_CASE("plug-in contrast on the reference model exceeds an order of magnitude") {
    const ModelSpec m = make_random_model(reference_model_config());
    const SolvedModel s = solve_model(m);
    std::vector<int> t(m.n_states());
    for (int x = 0; x < m.n_states(); ++x) t[x] = (x + 1) % m.n_states();
    const WeightSpec w = build_counterfactual_weight(t, s.pi);
    const DoubleRobustnessReport rep =
        run_double_robustness_check(m, s, w, {0.1, 0.2, 0.4}, ToleranceConfig{});
    CHECK(rep.pass);
    CHECK(rep.plugin_contrast_ratio > 10.0);
}
