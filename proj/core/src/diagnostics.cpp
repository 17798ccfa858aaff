#include "ddcw/diagnostics.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "ddcw/rng.hpp"
#include "json.hpp"

namespace ddcw {

using nlohmann::json;

// --- random models -----------------------------------------------------------

ModelSpec make_random_model(const RandomModelConfig& config) {
    if (config.n_states < 2 || config.n_actions < 2)
        throw InvalidArgumentError("random model needs n_states >= 2 and n_actions >= 2");
    for (int attempt = 0; attempt < 100; ++attempt) {
        SplitMix64 rng(SplitMix64::substream(config.seed, static_cast<std::uint64_t>(attempt)));
        ModelSpec m;
        m.states = StateSpace::with_one_hot(config.n_states);
        m.actions.n_actions = config.n_actions;
        m.beta = config.beta;
        m.utility.u.resize(config.n_states, config.n_actions);
        for (int x = 0; x < config.n_states; ++x) {
            const double level =
                config.level_scale > 0.0 ? rng.uniform(-config.level_scale, config.level_scale)
                                         : 0.0;
            for (int a = 0; a < config.n_actions; ++a)
                m.utility.u(x, a) =
                    level + rng.uniform(-config.utility_scale, config.utility_scale);
        }
        m.kernel.f.assign(config.n_actions,
                          Eigen::MatrixXd::Zero(config.n_states, config.n_states));
        for (int a = 0; a < config.n_actions; ++a) {
            for (int x = 0; x < config.n_states; ++x) {
                double sum = 0.0;
                for (int y = 0; y < config.n_states; ++y) {
                    const double g = rng.exponential();  // Dirichlet(1) row
                    m.kernel.f[a](x, y) = g;
                    sum += g;
                }
                m.kernel.f[a].row(x) /= sum;
            }
        }
        try {
            stationary_distribution(policy_transition_matrix(
                CCPMatrix{Eigen::MatrixXd::Constant(config.n_states, config.n_actions,
                                                     1.0 / config.n_actions)},
                m.kernel));
        } catch (const ReducibleChainError&) {
            continue;  // redraw
        }
        m.validate();
        return m;
    }
    throw Error("random model generation failed to produce an irreducible chain");
}

RandomModelConfig reference_model_config() {
    RandomModelConfig c;
    c.n_states = 20;
    c.n_actions = 2;
    c.beta = 0.9;
    c.utility_scale = 1.0;
    c.level_scale = 3.5;
    c.seed = 42ull;
    return c;
}

// --- experiment config ---------------------------------------------------------

ModelSpec ExperimentConfig::build_model() const {
    if (!model_json.empty()) {
        try {
            return ModelSpec::from_json(model_json);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            // invariant violations in a config-supplied model are config errors
            throw ConfigError(std::string("config model: ") + e.what());
        }
    }
    return make_random_model(generator.value_or(reference_model_config()));
}

void ExperimentConfig::validate() const {
    if (!model_json.empty() && generator.has_value())
        throw ConfigError("config: provide either 'model' or 'generator', not both");
    if (replications < 1) throw ConfigError("config.replications must be >= 1");
    if (folds < 1) throw ConfigError("config.folds must be >= 1");
    if (threads < 1) throw ConfigError("config.threads must be >= 1");
    if (eta < 0.0 || eta >= 1.0) throw ConfigError("config.eta must lie in [0,1)");
    if (n_grid.empty()) throw ConfigError("config.n_grid must be non-empty");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
        if (n_grid[i] <= 0) throw ConfigError("config.n_grid entries must be positive");
        if (i > 0 && n_grid[i] <= n_grid[i - 1])
            throw ConfigError("config.n_grid must be strictly ascending");
    }
    if (variants.empty()) throw ConfigError("config.variants must be non-empty");
    if (tolerances.coverage_lo > tolerances.coverage_hi)
        throw ConfigError("config.tolerances coverage band is empty");
    for (double e : eta_grid)
        if (e <= 0.0 || e >= 1.0) throw ConfigError("config.eta_grid entries must lie in (0,1)");
}

namespace {

json generator_to_json(const RandomModelConfig& g) {
    json j;
    j["seed"] = g.seed;
    j["n_states"] = g.n_states;
    j["n_actions"] = g.n_actions;
    j["beta"] = g.beta;
    j["utility_scale"] = g.utility_scale;
    j["level_scale"] = g.level_scale;
    return j;
}

RandomModelConfig generator_from_json(const json& j) {
    RandomModelConfig g;
    for (const auto& [key, val] : j.items()) {
        if (key == "seed") g.seed = val.get<std::uint64_t>();
        else if (key == "n_states") g.n_states = val.get<int>();
        else if (key == "n_actions") g.n_actions = val.get<int>();
        else if (key == "beta") g.beta = val.get<double>();
        else if (key == "utility_scale") g.utility_scale = val.get<double>();
        else if (key == "level_scale") g.level_scale = val.get<double>();
        else throw ConfigError("config.generator: unknown field '" + key + "'");
    }
    return g;
}

json tolerances_to_json(const ToleranceConfig& t) {
    json j;
    j["coverage_lo"] = t.coverage_lo;
    j["coverage_hi"] = t.coverage_hi;
    j["enumeration"] = t.enumeration;
    j["derivative_rel"] = t.derivative_rel;
    j["ratio_lo"] = t.ratio_lo;
    j["ratio_hi"] = t.ratio_hi;
    j["slope_min"] = t.slope_min;
    j["dr_bias"] = t.dr_bias;
    j["dr_ratio_lo"] = t.dr_ratio_lo;
    j["dr_ratio_hi"] = t.dr_ratio_hi;
    return j;
}

ToleranceConfig tolerances_from_json(const json& j) {
    ToleranceConfig t;
    for (const auto& [key, val] : j.items()) {
        if (key == "coverage_lo") t.coverage_lo = val.get<double>();
        else if (key == "coverage_hi") t.coverage_hi = val.get<double>();
        else if (key == "enumeration") t.enumeration = val.get<double>();
        else if (key == "derivative_rel") t.derivative_rel = val.get<double>();
        else if (key == "ratio_lo") t.ratio_lo = val.get<double>();
        else if (key == "ratio_hi") t.ratio_hi = val.get<double>();
        else if (key == "slope_min") t.slope_min = val.get<double>();
        else if (key == "dr_bias") t.dr_bias = val.get<double>();
        else if (key == "dr_ratio_lo") t.dr_ratio_lo = val.get<double>();
        else if (key == "dr_ratio_hi") t.dr_ratio_hi = val.get<double>();
        else throw ConfigError("config.tolerances: unknown field '" + key + "'");
    }
    return t;
}

json first_stage_to_json(const FirstStageOptions& f) {
    json j;
    j["ccp_method"] = to_string(f.ccp_method);
    j["ccp_alpha"] = f.ccp_alpha;
    j["transition_alpha"] = f.transition_alpha;
    j["ridge"] = f.ridge;
    j["lambda_empirical_marginal"] = f.lambda_empirical_marginal;
    return j;
}

FirstStageOptions first_stage_from_json(const json& j) {
    FirstStageOptions f;
    for (const auto& [key, val] : j.items()) {
        if (key == "ccp_method") f.ccp_method = ccp_method_from_string(val.get<std::string>());
        else if (key == "ccp_alpha") f.ccp_alpha = val.get<double>();
        else if (key == "transition_alpha") f.transition_alpha = val.get<double>();
        else if (key == "ridge") f.ridge = val.get<double>();
        else if (key == "lambda_empirical_marginal") f.lambda_empirical_marginal = val.get<bool>();
        else throw ConfigError("config.first_stage: unknown field '" + key + "'");
    }
    return f;
}

}  // namespace

std::string ExperimentConfig::to_json(int indent) const {
    json j;
    if (!model_json.empty())
        j["model"] = json::parse(model_json);
    else
        j["generator"] = generator_to_json(generator.value_or(reference_model_config()));
    j["weight"] = json::parse(weight.to_json());
    json vars = json::array();
    for (auto v : variants) vars.push_back(to_string(v));
    j["variants"] = std::move(vars);
    j["n_grid"] = n_grid;
    j["folds"] = folds;
    j["replications"] = replications;
    j["master_seed"] = master_seed;
    j["eta"] = eta;
    j["sampling_mode"] = to_string(mode);
    j["threads"] = threads;
    j["oracle_nuisances"] = oracle_nuisances;
    j["first_stage"] = first_stage_to_json(first_stage);
    j["eta_grid"] = eta_grid;
    j["lemma_models"] = lemma_models;
    j["tolerances"] = tolerances_to_json(tolerances);
    return indent >= 0 ? j.dump(indent) : j.dump();
}

std::string ExperimentConfig::canonical_json() const { return to_json(-1); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config JSON parse error: ") + e.what());
    }
    ExperimentConfig c;
    c.variants.clear();
    bool have_variants = false;
    for (const auto& [key, val] : j.items()) {
        if (key == "model") c.model_json = val.dump();
        else if (key == "generator") c.generator = generator_from_json(val);
        else if (key == "weight") c.weight = WeightConfig::from_json(val.dump());
        else if (key == "variants") {
            have_variants = true;
            for (const auto& v : val)
                c.variants.push_back(moment_variant_from_string(v.get<std::string>()));
        } else if (key == "n_grid") c.n_grid = val.get<std::vector<std::int64_t>>();
        else if (key == "folds") c.folds = val.get<int>();
        else if (key == "replications") c.replications = val.get<int>();
        else if (key == "master_seed") c.master_seed = val.get<std::uint64_t>();
        else if (key == "eta") c.eta = val.get<double>();
        else if (key == "sampling_mode") c.mode = sampling_mode_from_string(val.get<std::string>());
        else if (key == "threads") c.threads = val.get<int>();
        else if (key == "oracle_nuisances") c.oracle_nuisances = val.get<bool>();
        else if (key == "first_stage") c.first_stage = first_stage_from_json(val);
        else if (key == "eta_grid") c.eta_grid = val.get<std::vector<double>>();
        else if (key == "lemma_models") c.lemma_models = val.get<int>();
        else if (key == "tolerances") c.tolerances = tolerances_from_json(val);
        else throw ConfigError("config: unknown field '" + key + "'");
    }
    if (!have_variants) c.variants = {MomentVariant::Orthogonal};
    c.validate();
    return c;
}

// --- parallel helper -----------------------------------------------------------

void parallel_for_indexed(int n_tasks, int threads, const std::function<void(int)>& body) {
    if (threads <= 1 || n_tasks <= 1) {
        for (int i = 0; i < n_tasks; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    const int workers = std::min(threads, n_tasks);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n_tasks || failed.load()) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// --- coverage -------------------------------------------------------------------

namespace {

struct RepOutcome {
    bool ok = false;
    std::string error;
    std::vector<double> theta;  // per variant
    std::vector<double> se;
};

double mean_of(const std::vector<double>& xs) {
    return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace

CoverageTable run_coverage(const ExperimentConfig& config) {
    config.validate();
    for (auto v : config.variants)
        if (v == MomentVariant::StructuralProjected)
            throw ConfigError("structural variant is not supported in coverage experiments");

    const ModelSpec model = config.build_model();
    const SolvedModel solved = solve_model(model);
    const WeightSpec w = resolve_weight(config.weight, model.states, solved.pi);
    const double theta0 = true_theta(solved, w);

    FirstStageOptions fs = config.first_stage;
    fs.shrink_eta = config.eta;

    std::vector<NuisanceSet> oracle_folds;
    if (config.oracle_nuisances) {
        const NuisanceSet oracle = oracle_nuisances(model, solved, w, fs);
        oracle_folds.assign(static_cast<std::size_t>(config.folds), oracle);
    }

    CoverageTable table;
    table.theta0 = theta0;
    const int R = config.replications;
    const auto n_variants = config.variants.size();

    for (std::size_t ni = 0; ni < config.n_grid.size(); ++ni) {
        const std::int64_t n = config.n_grid[ni];
        std::vector<RepOutcome> outcomes(static_cast<std::size_t>(R));
        parallel_for_indexed(R, config.threads, [&](int rep) {
            RepOutcome& out = outcomes[static_cast<std::size_t>(rep)];
            try {
                const std::uint64_t rep_seed = SplitMix64::substream(
                    config.master_seed, static_cast<std::uint64_t>(ni) * R + rep);
                const Dataset data = simulate(model, solved, n, rep_seed, config.mode);
                const FoldAssignment folds = FoldAssignment::make(
                    data.n(), config.folds, SplitMix64::substream(rep_seed, 0xF01Dull));
                std::vector<NuisanceSet> fitted;
                const std::vector<NuisanceSet>* use = &oracle_folds;
                if (!config.oracle_nuisances) {
                    fitted = fit_folds(data, model, w, folds, fs);
                    use = &fitted;
                }
                out.theta.reserve(n_variants);
                out.se.reserve(n_variants);
                for (auto v : config.variants) {
                    const EstimateReport rep_est =
                        cross_fit_estimate(data, folds, *use, v, w, model.beta);
                    out.theta.push_back(rep_est.theta_hat);
                    out.se.push_back(rep_est.se);
                }
                out.ok = true;
            } catch (const std::exception& e) {
                out.ok = false;
                out.error = e.what();
            }
        });

        for (std::size_t vi = 0; vi < n_variants; ++vi) {
            CoverageCell cell;
            cell.variant = config.variants[vi];
            cell.n = n;
            cell.eta = config.eta;
            cell.replications = R;
            std::vector<double> thetas, ses, sq_err;
            int hits = 0;
            for (const auto& out : outcomes) {
                if (!out.ok) {
                    ++cell.failures;
                    continue;
                }
                const double th = out.theta[vi], se = out.se[vi];
                thetas.push_back(th);
                ses.push_back(se);
                sq_err.push_back((th - theta0) * (th - theta0));
                if (std::abs(th - theta0) <= kZ975 * se) ++hits;
            }
            const auto successes = thetas.size();
            if (successes > 0) {
                cell.coverage = static_cast<double>(hits) / static_cast<double>(successes);
                cell.mean_bias = mean_of(thetas) - theta0;
                cell.rmse = std::sqrt(mean_of(sq_err));
                cell.mean_se = mean_of(ses);
                std::vector<double> dev(successes);
                const double mean_theta = mean_of(thetas);
                for (std::size_t i = 0; i < successes; ++i) {
                    const double d = thetas[i] - mean_theta;
                    dev[i] = d * d;
                }
                cell.sd_theta = std::sqrt(mean_of(dev));
            }
            cell.gating = config.eta == 0.0 && (cell.variant == MomentVariant::Orthogonal ||
                                                cell.variant == MomentVariant::OrthogonalAltDR);
            if (cell.failures > R / 100) {
                cell.flags.push_back("failure_rate_above_1pct");
                if (cell.gating) cell.pass = false;
            }
            if (cell.gating) {
                if (cell.coverage < config.tolerances.coverage_lo ||
                    cell.coverage > config.tolerances.coverage_hi)
                    cell.pass = false;
            }
            if (cell.variant == MomentVariant::PlugIn && config.eta > 0.0 &&
                cell.coverage < 0.90)
                cell.flags.push_back("non_orthogonality_demonstrated");
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

bool CoverageTable::all_pass() const {
    for (const auto& c : cells)
        if (!c.pass) return false;
    return true;
}

std::string CoverageTable::to_csv() const {
    std::string out =
        "variant,n,eta,replications,failures,coverage,mean_bias,rmse,mean_se,sd_theta,gating,pass,"
        "flags\n";
    for (const auto& c : cells) {
        out += to_string(c.variant);
        out += ",";
        out += std::to_string(c.n) + "," + format_double(c.eta) + "," +
               std::to_string(c.replications) + "," + std::to_string(c.failures) + "," +
               format_double(c.coverage) + "," + format_double(c.mean_bias) + "," +
               format_double(c.rmse) + "," + format_double(c.mean_se) + "," +
               format_double(c.sd_theta) + "," + (c.gating ? "1" : "0") + "," +
               (c.pass ? "1" : "0") + ",";
        for (std::size_t i = 0; i < c.flags.size(); ++i) out += (i ? ";" : "") + c.flags[i];
        out += "\n";
    }
    return out;
}

std::string CoverageTable::to_json(int indent) const {
    json j;
    j["theta0"] = theta0;
    j["all_pass"] = all_pass();
    json cells_json = json::array();
    for (const auto& c : cells) {
        json cj;
        cj["variant"] = to_string(c.variant);
        cj["n"] = c.n;
        cj["eta"] = c.eta;
        cj["replications"] = c.replications;
        cj["failures"] = c.failures;
        cj["coverage"] = c.coverage;
        cj["mean_bias"] = c.mean_bias;
        cj["rmse"] = c.rmse;
        cj["mean_se"] = c.mean_se;
        cj["sd_theta"] = c.sd_theta;
        cj["gating"] = c.gating;
        cj["pass"] = c.pass;
        cj["flags"] = c.flags;
        cells_json.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells_json);
    return j.dump(indent);
}

// --- orthogonality ---------------------------------------------------------------

namespace {

NuisanceSet make_gamma(const ModelSpec& model, const CCPMatrix& p, const TransitionKernel& f,
                       Eigen::VectorXd lambda) {
    NuisanceSet g;
    g.p_hat = p;
    g.f_hat = f;
    g.lambda_hat = std::move(lambda);
    g.v_hat = solve_value_ccp(p, f, model.utility.u, model.beta);
    g.util_tilde = expected_current_utility(model.utility.u, p, ClipPolicy{});
    g.provenance.ccp_estimator = "path";
    return g;
}

struct Directions {
    CCPMatrix p_alt;
    TransitionKernel f_alt;
    Eigen::VectorXd lambda_alt;
};

Directions make_directions(const ModelSpec& model, const SolvedModel& solved,
                           const Eigen::VectorXd& lambda0, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const int n = model.n_states();
    const int J = model.n_actions();
    Directions d;
    d.p_alt.p.resize(n, J);
    for (int x = 0; x < n; ++x) {
        Eigen::VectorXd q = solved.q.row(x).transpose();
        for (int a = 0; a < J; ++a) q(a) += rng.uniform(-1.0, 1.0);
        d.p_alt.p.row(x) = ccp_from_values(q).transpose();
    }
    d.f_alt.f.assign(J, Eigen::MatrixXd::Zero(n, n));
    for (int a = 0; a < J; ++a)
        for (int x = 0; x < n; ++x) {
            Eigen::VectorXd row(n);
            double sum = 0.0;
            for (int y = 0; y < n; ++y) {
                row(y) = rng.exponential();
                sum += row(y);
            }
            d.f_alt.f[a].row(x) = 0.5 * model.kernel.f[a].row(x) + 0.5 * (row / sum).transpose();
        }
    d.lambda_alt = lambda0;
    for (int x = 0; x < n; ++x) d.lambda_alt(x) += rng.uniform(-1.0, 1.0);
    return d;
}

}  // namespace

double ccp_value_rate_slope(const ModelSpec& model, const SolvedModel& solved,
                            std::uint64_t direction_seed) {
    SplitMix64 rng(direction_seed);
    const int n = model.n_states();
    const int J = model.n_actions();
    CCPMatrix p_alt;
    p_alt.p.resize(n, J);
    for (int x = 0; x < n; ++x) {
        Eigen::VectorXd q = solved.q.row(x).transpose();
        for (int a = 0; a < J; ++a) q(a) += rng.uniform(-1.0, 1.0);
        p_alt.p.row(x) = ccp_from_values(q).transpose();
    }
    const Eigen::VectorXd v0 =
        solve_value_ccp(solved.ccp, model.kernel, model.utility.u, model.beta).v;
    std::vector<double> log_r, log_err;
    for (int k = 0; k <= 6; ++k) {
        const double r = 1e-2 / static_cast<double>(1 << k);
        CCPMatrix p_r;
        p_r.p = solved.ccp.p + r * (p_alt.p - solved.ccp.p);
        const Eigen::VectorXd v_r =
            solve_value_ccp(p_r, model.kernel, model.utility.u, model.beta).v;
        const double err = (v_r - v0).cwiseAbs().maxCoeff();
        if (err <= 0.0) continue;
        log_r.push_back(std::log(r));
        log_err.push_back(std::log(err));
    }
    if (log_r.size() < 3) return 2.0;  // differences at the noise floor everywhere
    const auto m = static_cast<double>(log_r.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < log_r.size(); ++i) {
        sx += log_r[i];
        sy += log_err[i];
        sxx += log_r[i] * log_r[i];
        sxy += log_r[i] * log_err[i];
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

OrthogonalityReport run_orthogonality_check(const ModelSpec& model, const SolvedModel& solved,
                                            const WeightSpec& w, const ToleranceConfig& tol,
                                            std::uint64_t direction_seed) {
    const double cells = static_cast<double>(model.n_states()) * model.n_states() *
                         model.n_actions();
    if (cells > 1e6)
        throw InvalidArgumentError(
            "orthogonality check: enumeration over " + format_double(cells) +
            " (x,a,x') cells exceeds the 1e6 budget");
    const BackwardKernel b0 = backward_kernel(solved.p_policy, solved.pi);
    const Eigen::VectorXd lambda0 = solve_lambda(w.w, b0, model.beta).lambda;
    const Directions dirs = make_directions(model, solved, lambda0, direction_seed);
    const NuisanceSet gamma0 = make_gamma(model, solved.ccp, model.kernel, lambda0);

    OrthogonalityReport rep;
    rep.theta0 = true_theta(solved, w);
    rep.scale = std::max(1.0, std::abs(rep.theta0));
    const double base_plugin = population_moment_mean(solved, model.kernel, gamma0,
                                                      MomentVariant::PlugIn, w, model.beta);
    const double base_orth = population_moment_mean(solved, model.kernel, gamma0,
                                                    MomentVariant::Orthogonal, w, model.beta);

    const auto gamma_at = [&](const std::string& direction, double r) {
        CCPMatrix p = solved.ccp;
        TransitionKernel f = model.kernel;
        Eigen::VectorXd lambda = lambda0;
        if (direction == "p" || direction == "joint")
            p.p = solved.ccp.p + r * (dirs.p_alt.p - solved.ccp.p);
        if (direction == "f" || direction == "joint")
            for (int a = 0; a < model.n_actions(); ++a)
                f.f[a] = model.kernel.f[a] + r * (dirs.f_alt.f[a] - model.kernel.f[a]);
        if (direction == "lambda" || direction == "joint")
            lambda = lambda0 + r * (dirs.lambda_alt - lambda0);
        return make_gamma(model, p, f, std::move(lambda));
    };

    const double zero_floor = 1e-10 * rep.scale;
    for (MomentVariant variant : {MomentVariant::Orthogonal, MomentVariant::PlugIn}) {
        const double base = variant == MomentVariant::PlugIn ? base_plugin : base_orth;
        for (const std::string& direction : {"p", "f", "lambda", "joint"}) {
            const auto phi = [&](double r) {
                const NuisanceSet g = gamma_at(direction, r);
                return population_moment_mean(solved, model.kernel, g, variant, w, model.beta) -
                       base;
            };
            DirectionResult res;
            res.direction = direction;
            res.variant = variant;
            const double h = 1e-4;
            res.derivative = (phi(h) - phi(-h)) / (2.0 * h);
            const double p1 = phi(1e-2), p2 = phi(5e-3), p3 = phi(2.5e-3);
            res.phi_r = p1;
            res.exact_zero = std::abs(p1) <= zero_floor && std::abs(p2) <= zero_floor &&
                             std::abs(p3) <= zero_floor;
            if (!res.exact_zero) {
                res.ratio1 = p1 / p2;
                res.ratio2 = p2 / p3;
            }
            if (variant == MomentVariant::Orthogonal) {
                res.pass = std::abs(res.derivative) <= tol.derivative_rel * rep.scale;
                if (!res.exact_zero)
                    res.pass = res.pass && res.ratio1 >= tol.ratio_lo &&
                               res.ratio1 <= tol.ratio_hi && res.ratio2 >= tol.ratio_lo &&
                               res.ratio2 <= tol.ratio_hi;
            } else {
                // the plain welfare functional is CCP-orthogonal but not f-orthogonal
                if (direction == "p")
                    res.pass = std::abs(res.derivative) <= tol.derivative_rel * rep.scale;
                else if (direction == "f")
                    res.pass = std::abs(res.derivative) >= 1e3 * tol.derivative_rel * rep.scale;
                else
                    res.pass = true;
            }
            rep.directions.push_back(std::move(res));
        }
    }
    rep.v_slope = ccp_value_rate_slope(model, solved, direction_seed + 1);
    rep.v_slope_pass = rep.v_slope >= tol.slope_min;
    return rep;
}

bool OrthogonalityReport::all_pass() const {
    if (!v_slope_pass) return false;
    for (const auto& d : directions)
        if (!d.pass) return false;
    return true;
}

std::string OrthogonalityReport::to_json(int indent) const {
    json j;
    j["theta0"] = theta0;
    j["scale"] = scale;
    j["v_slope"] = v_slope;
    j["v_slope_pass"] = v_slope_pass;
    j["all_pass"] = all_pass();
    json dirs = json::array();
    for (const auto& d : directions) {
        json dj;
        dj["variant"] = to_string(d.variant);
        dj["direction"] = d.direction;
        dj["derivative"] = d.derivative;
        dj["phi_1e-2"] = d.phi_r;
        dj["ratio1"] = d.ratio1;
        dj["ratio2"] = d.ratio2;
        dj["exact_zero"] = d.exact_zero;
        dj["pass"] = d.pass;
        dirs.push_back(std::move(dj));
    }
    j["directions"] = std::move(dirs);
    return j.dump(indent);
}

// --- double robustness --------------------------------------------------------------

DoubleRobustnessReport run_double_robustness_check(const ModelSpec& model,
                                                   const SolvedModel& solved, const WeightSpec& w,
                                                   const std::vector<double>& eta_grid,
                                                   const ToleranceConfig& tol) {
    const BackwardKernel b0 = backward_kernel(solved.p_policy, solved.pi);
    const Eigen::VectorXd lambda0 = solve_lambda(w.w, b0, model.beta).lambda;
    const double theta0 = true_theta(solved, w);

    const auto lambda_for = [&](const TransitionKernel& f_eta) {
        const Eigen::MatrixXd pp = policy_transition_matrix(solved.ccp, f_eta);
        const StationaryDistribution pi_eta = stationary_distribution(pp);
        const BackwardKernel b_eta = backward_kernel(pp, pi_eta);
        return solve_lambda(w.w, b_eta, model.beta).lambda;
    };

    DoubleRobustnessReport rep;
    rep.theta0 = theta0;
    for (double eta : eta_grid) {
        const TransitionKernel f_eta = shrink_toward_uniform(model.kernel, eta);
        const Eigen::VectorXd lambda_eta = lambda_for(f_eta);
        DoubleRobustnessRow row;
        row.eta = eta;
        row.bias_f_only =
            population_moment_mean(solved, model.kernel,
                                   make_gamma(model, solved.ccp, f_eta, lambda0),
                                   MomentVariant::Orthogonal, w, model.beta) -
            theta0;
        row.bias_lambda_only =
            population_moment_mean(solved, model.kernel,
                                   make_gamma(model, solved.ccp, model.kernel, lambda_eta),
                                   MomentVariant::Orthogonal, w, model.beta) -
            theta0;
        row.bias_joint =
            population_moment_mean(solved, model.kernel,
                                   make_gamma(model, solved.ccp, f_eta, lambda_eta),
                                   MomentVariant::Orthogonal, w, model.beta) -
            theta0;
        rep.rows.push_back(row);
        if (std::abs(row.bias_f_only) > tol.dr_bias ||
            std::abs(row.bias_lambda_only) > tol.dr_bias)
            rep.pass = false;
    }
    for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i) {
        if (std::abs(2.0 * rep.rows[i].eta - rep.rows[i + 1].eta) > 1e-12) continue;
        const double denom = rep.rows[i].bias_joint;
        const double ratio = denom != 0.0 ? rep.rows[i + 1].bias_joint / denom : 0.0;
        rep.joint_ratios.push_back(ratio);
    }
    if (!rep.joint_ratios.empty()) {
        const double first = rep.joint_ratios.front();
        if (first < tol.dr_ratio_lo || first > tol.dr_ratio_hi) rep.pass = false;
    }

    // plug-in contrast under the constant weight at eta = 0.2, both stages biased
    {
        const WeightSpec w1 = build_constant_weight(model.states);
        const double theta0_w1 = true_theta(solved, w1);
        const CCPMatrix p_eta = shrink_toward_uniform(solved.ccp, 0.2);
        const TransitionKernel f_eta = shrink_toward_uniform(model.kernel, 0.2);
        const Eigen::VectorXd lambda1 =
            Eigen::VectorXd::Constant(model.n_states(), 1.0 / (1.0 - model.beta));
        const NuisanceSet g = make_gamma(model, p_eta, f_eta, lambda1);
        const double bias_plugin = std::abs(
            population_moment_mean(solved, model.kernel, g, MomentVariant::PlugIn, w1,
                                   model.beta) -
            theta0_w1);
        const double bias_orth = std::abs(
            population_moment_mean(solved, model.kernel, g, MomentVariant::Orthogonal, w1,
                                   model.beta) -
            theta0_w1);
        // informational on arbitrary models; the reference-model suites gate it
        rep.plugin_contrast_ratio = bias_plugin / std::max(bias_orth, 1e-15);
    }
    return rep;
}

std::string DoubleRobustnessReport::to_json(int indent) const {
    json j;
    j["theta0"] = theta0;
    j["pass"] = pass;
    j["plugin_contrast_ratio"] = plugin_contrast_ratio;
    j["joint_ratios"] = joint_ratios;
    json rows_json = json::array();
    for (const auto& r : rows) {
        json rj;
        rj["eta"] = r.eta;
        rj["bias_f_only"] = r.bias_f_only;
        rj["bias_lambda_only"] = r.bias_lambda_only;
        rj["bias_joint"] = r.bias_joint;
        rows_json.push_back(std::move(rj));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(indent);
}

// --- lemma suite -----------------------------------------------------------------------

LemmaSuiteReport run_lemma_suite(int n_models, std::uint64_t seed, const RandomModelConfig& base,
                                 const ToleranceConfig& tol) {
    LemmaSuiteReport rep;
    rep.n_models = n_models;
    rep.worst_slope = std::numeric_limits<double>::infinity();
    rep.worst_kress_margin = std::numeric_limits<double>::infinity();
    rep.slope_required = std::max(0, n_models - 2);

    for (int i = 0; i < n_models; ++i) {
        RandomModelConfig cfg = base;
        cfg.seed = SplitMix64::substream(seed, static_cast<std::uint64_t>(i));
        const ModelSpec model = make_random_model(cfg);
        const SolvedModel solved = solve_model(model);
        SplitMix64 rng(SplitMix64::substream(seed, 1'000'000ull + i));
        const int n = model.n_states();
        const int J = model.n_actions();
        const double beta = model.beta;

        // contraction and operator norms
        {
            bool ok = true;
            for (int trial = 0; trial < 3; ++trial) {
                Eigen::VectorXd d(n);
                for (int x = 0; x < n; ++x) d(x) = rng.uniform(-1.0, 1.0);
                const double lhs = (beta * (solved.p_policy * d)).cwiseAbs().maxCoeff();
                if (lhs > beta * d.cwiseAbs().maxCoeff() + 1e-12) ok = false;
            }
            const CCPOperator a = CCPOperator::from(solved.ccp, model.kernel, beta);
            CCPMatrix p_hat;
            p_hat.p.resize(n, J);
            for (int x = 0; x < n; ++x) {
                Eigen::VectorXd q = solved.q.row(x).transpose();
                for (int c = 0; c < J; ++c) q(c) += 0.1 * rng.uniform(-1.0, 1.0);
                p_hat.p.row(x) = ccp_from_values(q).transpose();
            }
            const CCPOperator a_hat = CCPOperator::from(p_hat, model.kernel, beta);
            const OperatorDiagnostics diag = operator_norm_diagnostics(a, a_hat);
            if (diag.norm_i_minus_a > beta + 1e-12) ok = false;
            double sum_dp = 0.0;
            for (int c = 0; c < J; ++c)
                sum_dp += (p_hat.p.col(c) - solved.ccp.p.col(c)).cwiseAbs().maxCoeff();
            if (diag.norm_inv_a_diff > beta / (1.0 - beta) * sum_dp + 1e-12) ok = false;
            if (ok) ++rep.contraction_pass;

            // Kress bound on the same perturbation
            const Eigen::VectorXd xi = expected_current_utility(model.utility.u, solved.ccp);
            const Eigen::VectorXd xi_hat = expected_current_utility(model.utility.u, p_hat);
            const Eigen::VectorXd phi =
                solve_value_ccp(solved.ccp, model.kernel, model.utility.u, beta).v;
            const Eigen::VectorXd phi_hat =
                solve_value_ccp(p_hat, model.kernel, model.utility.u, beta).v;
            const double bound = kress_error_bound(a, a_hat, xi, xi_hat, phi);
            const double observed = (phi_hat - phi).cwiseAbs().maxCoeff();
            rep.worst_kress_margin = std::min(rep.worst_kress_margin, bound - observed);
            if (observed <= bound) ++rep.kress_pass;
        }

        // second-order CCP rate along a softmax path
        {
            Eigen::MatrixXd dir(n, J);
            for (int x = 0; x < n; ++x)
                for (int a = 0; a < J; ++a) dir(x, a) = rng.uniform(-1.0, 1.0);
            const Eigen::VectorXd v0 =
                solve_value_ccp(solved.ccp, model.kernel, model.utility.u, beta).v;
            std::vector<double> lr, le;
            for (int k = 0; k <= 6; ++k) {
                const double eps = 1e-2 / static_cast<double>(1 << k);
                CCPMatrix p_eps;
                p_eps.p.resize(n, J);
                for (int x = 0; x < n; ++x) {
                    Eigen::VectorXd q = solved.q.row(x).transpose() + eps * dir.row(x).transpose();
                    p_eps.p.row(x) = ccp_from_values(q).transpose();
                }
                const Eigen::VectorXd v_eps =
                    solve_value_ccp(p_eps, model.kernel, model.utility.u, beta).v;
                const double err = (v_eps - v0).cwiseAbs().maxCoeff();
                if (err <= 0.0) continue;
                lr.push_back(std::log(eps));
                le.push_back(std::log(err));
            }
            double slope = 2.0;
            if (lr.size() >= 3) {
                const auto m = static_cast<double>(lr.size());
                double sx = 0, sy = 0, sxx = 0, sxy = 0;
                for (std::size_t k = 0; k < lr.size(); ++k) {
                    sx += lr[k];
                    sy += le[k];
                    sxx += lr[k] * lr[k];
                    sxy += lr[k] * le[k];
                }
                slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            }
            rep.worst_slope = std::min(rep.worst_slope, slope);
            if (slope >= tol.slope_min) ++rep.slope_pass;
        }

        // Lipschitz in the transition density
        {
            TransitionKernel g;
            g.f.assign(J, Eigen::MatrixXd::Zero(n, n));
            for (int a = 0; a < J; ++a)
                for (int x = 0; x < n; ++x) {
                    Eigen::VectorXd row(n);
                    double sum = 0.0;
                    for (int y = 0; y < n; ++y) {
                        row(y) = rng.exponential();
                        sum += row(y);
                    }
                    g.f[a].row(x) = (row / sum).transpose();
                }
            const double delta = 0.3;
            TransitionKernel f_delta = model.kernel;
            double max_l1 = 0.0;
            for (int a = 0; a < J; ++a) {
                f_delta.f[a] = (1.0 - delta) * model.kernel.f[a] + delta * g.f[a];
                for (int x = 0; x < n; ++x)
                    max_l1 = std::max(
                        max_l1, (f_delta.f[a].row(x) - model.kernel.f[a].row(x)).cwiseAbs().sum());
            }
            const Eigen::VectorXd v0 =
                solve_value_ccp(solved.ccp, model.kernel, model.utility.u, beta).v;
            const Eigen::VectorXd v_delta =
                solve_value_ccp(solved.ccp, f_delta, model.utility.u, beta).v;
            const double lhs = (v_delta - v0).cwiseAbs().maxCoeff();
            const double bound =
                beta / (1.0 - beta) * v0.cwiseAbs().maxCoeff() * max_l1;
            if (lhs <= bound + 1e-12) ++rep.lipschitz_pass;
        }

        // cross-method solver agreement
        {
            const Eigen::VectorXd via_ccp =
                solve_value_ccp(solved.ccp, model.kernel, model.utility.u, beta).v;
            const double gap = (via_ccp - solved.value.v).cwiseAbs().maxCoeff();
            rep.worst_solver_gap = std::max(rep.worst_solver_gap, gap);
            const Eigen::VectorXd via_neumann =
                solve_value_ccp(solved.ccp, model.kernel, model.utility.u, beta,
                                SolveMethod::NeumannSeries)
                    .v;
            const double gap2 = (via_neumann - via_ccp).cwiseAbs().maxCoeff();
            if (gap <= 1e-8 && gap2 <= 1e-9) ++rep.solver_agreement_pass;
        }

        // lambda identities
        {
            const BackwardKernel b = backward_kernel(solved.p_policy, solved.pi);
            const WeightSpec w1 = build_constant_weight(model.states);
            const LambdaVector l1 = solve_lambda(w1.w, b, beta);
            bool ok = l1.residual <= 1e-10;
            ok = ok && ((1.0 - beta) * l1.lambda.array() - 1.0).abs().maxCoeff() <= 1e-12;
            std::vector<int> t(n);
            for (int x = 0; x < n; ++x) t[x] = (x + 1) % n;
            const WeightSpec wt = build_counterfactual_weight(t, solved.pi);
            const LambdaVector lt = solve_lambda(wt.w, b, beta);
            rep.worst_lambda_residual = std::max(rep.worst_lambda_residual,
                                                 std::max(l1.residual, lt.residual));
            ok = ok && lt.residual <= 1e-10;
            ok = ok && lt.lambda.cwiseAbs().maxCoeff() <=
                           wt.w.cwiseAbs().maxCoeff() / (1.0 - beta) * (1.0 + 1e-12);
            // zero-bias identity: E_pi[(w - lambda) dv] + beta E_pi[lambda P dv] = 0
            Eigen::VectorXd dv(n);
            for (int x = 0; x < n; ++x) dv(x) = rng.uniform(-1.0, 1.0);
            const double term =
                (solved.pi.pi.array() * (wt.w - lt.lambda).array() * dv.array()).sum() +
                beta * (solved.pi.pi.array() * lt.lambda.array() *
                        (solved.p_policy * dv).array())
                          .sum();
            ok = ok && std::abs(term) <= 1e-10;
            if (ok) ++rep.lambda_identity_pass;
        }
    }
    return rep;
}

bool LemmaSuiteReport::all_pass() const {
    return contraction_pass == n_models && kress_pass == n_models &&
           lipschitz_pass == n_models && solver_agreement_pass == n_models &&
           lambda_identity_pass == n_models && slope_pass >= slope_required;
}

std::string LemmaSuiteReport::to_json(int indent) const {
    json j;
    j["n_models"] = n_models;
    j["contraction_pass"] = contraction_pass;
    j["slope_pass"] = slope_pass;
    j["slope_required"] = slope_required;
    j["kress_pass"] = kress_pass;
    j["lipschitz_pass"] = lipschitz_pass;
    j["solver_agreement_pass"] = solver_agreement_pass;
    j["lambda_identity_pass"] = lambda_identity_pass;
    j["worst_slope"] = worst_slope;
    j["worst_solver_gap"] = worst_solver_gap;
    j["worst_lambda_residual"] = worst_lambda_residual;
    j["worst_kress_margin"] = worst_kress_margin;
    j["all_pass"] = all_pass();
    return j.dump(indent);
}

}  // namespace ddcw
