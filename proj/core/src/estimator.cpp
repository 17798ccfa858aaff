#include "ddcw/estimator.hpp"

#include <cmath>

#include "json.hpp"

namespace ddcw {

const char* to_string(MomentVariant v) {
    switch (v) {
        case MomentVariant::PlugIn: return "plugin";
        case MomentVariant::Orthogonal: return "orthogonal";
        case MomentVariant::OrthogonalAltDR: return "alt_dr";
        case MomentVariant::StructuralProjected: return "structural";
    }
    return "?";
}

MomentVariant moment_variant_from_string(const std::string& s) {
    if (s == "plugin") return MomentVariant::PlugIn;
    if (s == "orthogonal") return MomentVariant::Orthogonal;
    if (s == "alt_dr") return MomentVariant::OrthogonalAltDR;
    if (s == "structural") return MomentVariant::StructuralProjected;
    throw ConfigError("unknown estimator variant '" + s + "'");
}

MomentContext MomentContext::from(const NuisanceSet& gamma) {
    MomentContext ctx;
    ctx.gamma = &gamma;
    const int J = gamma.p_hat.n_actions();
    ctx.cond_value.resize(gamma.p_hat.n_states(), J);
    for (int a = 0; a < J; ++a) ctx.cond_value.col(a) = gamma.f_hat.f[a] * gamma.v_hat.v;
    ctx.mixture_cond = (gamma.p_hat.p.array() * ctx.cond_value.array()).rowwise().sum();
    return ctx;
}

double moment_plugin(const Dataset::Record& z, const MomentContext& ctx, const WeightSpec& w) {
    return w.w(z.x) * ctx.gamma->v_hat.v(z.x);
}

double moment_orthogonal(const Dataset::Record& z, const MomentContext& ctx, const WeightSpec& w,
                         double beta, ConditionalMeanForm form) {
    const auto& g = *ctx.gamma;
    const double cond = form == ConditionalMeanForm::RealizedAction
                            ? ctx.cond_value(z.x, z.a)
                            : ctx.mixture_cond(z.x);
    return w.w(z.x) * g.v_hat.v(z.x) +
           beta * g.lambda_hat(z.x) * (g.v_hat.v(z.x_next) - cond);
}

double moment_orthogonal_alt_dr(const Dataset::Record& z, const MomentContext& ctx,
                                const WeightSpec& w, double beta) {
    if (!w.constant())
        throw UnsupportedVariantError(
            "the alt-DR moment is defined for the constant weight only");
    const auto& g = *ctx.gamma;
    const double v_x = g.v_hat.v(z.x);
    const double v_next = g.v_hat.v(z.x_next);
    return v_x + beta / (1.0 - beta) * v_next - (v_x - g.util_tilde(z.x)) / (1.0 - beta);
}

Eigen::VectorXd g_delta(const UtilitySpec& utility, const Eigen::VectorXd& pi,
                        const Eigen::VectorXd& lambda, const CCPMatrix& p) {
    if (!utility.parameterized())
        throw InvalidArgumentError("g_delta requires a parameterized utility (gradient tensor)");
    const auto dim = static_cast<Eigen::Index>(utility.gradient.size());
    Eigen::VectorXd g(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const Eigen::VectorXd per_state =
            (p.p.array() * utility.gradient[static_cast<std::size_t>(k)].array()).rowwise().sum();
        g(k) = (pi.array() * lambda.array() * per_state.array()).sum();
    }
    return g;
}

double structural_projection_factor(const Eigen::VectorXd& g) {
    const double gtg = g.squaredNorm();
    if (gtg == 0.0)
        throw InvalidArgumentError("structural projection undefined for G = 0");
    return 1.0 - g.dot(g) / gtg;  // identically zero; kept in the displayed form
}

double moment_structural_projected(const Dataset::Record& z, const MomentContext& ctx,
                                   const WeightSpec& w, double beta, const Eigen::VectorXd& g) {
    return structural_projection_factor(g) * moment_orthogonal(z, ctx, w, beta);
}

std::string EstimateReport::to_json(int indent) const {
    nlohmann::json j;
    j["theta_hat"] = theta_hat;
    j["se"] = se;
    j["ci_lo"] = ci_lo;
    j["ci_hi"] = ci_hi;
    j["variant"] = to_string(variant);
    j["n"] = n;
    j["K"] = k_folds;
    j["seed"] = seed;
    j["nuisance_provenance"] =
        nuisance_provenance.empty() ? nlohmann::json() : nlohmann::json::parse(nuisance_provenance);
    j["degenerate_flags"] = degenerate_flags;
    return indent >= 0 ? j.dump(indent) : j.dump();
}

MomentEvaluation evaluate_moments(const Dataset& data, const FoldAssignment& folds,
                                  const std::vector<NuisanceSet>& nuisances,
                                  MomentVariant variant, const WeightSpec& w, double beta,
                                  const CrossFitOptions& opts) {
    if (static_cast<int>(nuisances.size()) != folds.k)
        throw ShapeError("one nuisance set per fold required");
    if (folds.fold_of.size() != data.records.size())
        throw ShapeError("fold assignment does not match dataset");
    if (variant == MomentVariant::StructuralProjected && !opts.structural_g)
        throw InvalidArgumentError("structural variant requires the G vector");

    std::vector<MomentContext> ctx;
    ctx.reserve(nuisances.size());
    for (const auto& g : nuisances) ctx.push_back(MomentContext::from(g));

    MomentEvaluation ev;
    ev.variant = variant;
    ev.fold_of = folds.fold_of;
    ev.m.resize(data.records.size());
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const auto& z = data.records[i];
        const auto& c = ctx[folds.fold_of[i]];
        double m = 0.0;
        switch (variant) {
            case MomentVariant::PlugIn: m = moment_plugin(z, c, w); break;
            case MomentVariant::Orthogonal:
                m = moment_orthogonal(z, c, w, beta, opts.form);
                break;
            case MomentVariant::OrthogonalAltDR:
                m = moment_orthogonal_alt_dr(z, c, w, beta);
                break;
            case MomentVariant::StructuralProjected:
                m = moment_structural_projected(z, c, w, beta, *opts.structural_g);
                break;
        }
        if (!std::isfinite(m))
            throw EstimationError("non-finite moment at record " + std::to_string(i));
        ev.m[i] = m;
    }
    return ev;
}

EstimateReport cross_fit_estimate(const Dataset& data, const FoldAssignment& folds,
                                  const std::vector<NuisanceSet>& nuisances,
                                  MomentVariant variant, const WeightSpec& w, double beta,
                                  const CrossFitOptions& opts) {
    const MomentEvaluation ev =
        evaluate_moments(data, folds, nuisances, variant, w, beta, opts);
    const std::size_t n = ev.m.size();
    EstimateReport rep;
    rep.variant = variant;
    rep.n = n;
    rep.k_folds = folds.k;
    rep.seed = data.seed;
    if (!nuisances.empty()) rep.nuisance_provenance = nuisances.front().provenance.to_json();

    const double theta = pairwise_sum(ev.m) / static_cast<double>(n);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = ev.m[i] - theta;
        sq[i] = d * d;
    }
    double var = pairwise_sum(sq) / static_cast<double>(n);
    bool degenerate = true;
    for (std::size_t i = 1; i < n && degenerate; ++i)
        if (ev.m[i] != ev.m[0]) degenerate = false;
    if (degenerate || n < 2) {
        rep.degenerate_flags.push_back("degenerate_variance");
        var = std::max(var, opts.se_floor * opts.se_floor);
    }
    if (variant == MomentVariant::StructuralProjected)
        rep.degenerate_flags.push_back("structural_projection_annihilates_scalar_moment");

    rep.theta_hat = theta;
    rep.se = std::sqrt(var / static_cast<double>(n));
    if (rep.se < opts.se_floor && (degenerate || n < 2)) rep.se = opts.se_floor;
    rep.ci_lo = theta - kZ975 * rep.se;
    rep.ci_hi = theta + kZ975 * rep.se;
    return rep;
}

double population_moment_mean(const SolvedModel& solved, const TransitionKernel& true_kernel,
                              const NuisanceSet& gamma, MomentVariant variant,
                              const WeightSpec& w, double beta, const CrossFitOptions& opts) {
    const MomentContext ctx = MomentContext::from(gamma);
    const int n = gamma.p_hat.n_states();
    const int J = gamma.p_hat.n_actions();
    const Eigen::VectorXd& pi = solved.pi.pi;
    const Eigen::VectorXd& v_hat = gamma.v_hat.v;

    // E_true[Vhat(x') | x, a] against the true kernel
    Eigen::MatrixXd cond_true(n, J);
    for (int a = 0; a < J; ++a) cond_true.col(a) = true_kernel.f[a] * v_hat;

    switch (variant) {
        case MomentVariant::PlugIn:
            return (pi.array() * w.w.array() * v_hat.array()).sum();
        case MomentVariant::Orthogonal: {
            double acc = (pi.array() * w.w.array() * v_hat.array()).sum();
            for (int x = 0; x < n; ++x) {
                double corr = 0.0;
                for (int a = 0; a < J; ++a) {
                    const double cond = opts.form == ConditionalMeanForm::RealizedAction
                                            ? ctx.cond_value(x, a)
                                            : ctx.mixture_cond(x);
                    corr += solved.ccp.p(x, a) * (cond_true(x, a) - cond);
                }
                acc += pi(x) * beta * gamma.lambda_hat(x) * corr;
            }
            return acc;
        }
        case MomentVariant::OrthogonalAltDR: {
            if (!w.constant())
                throw UnsupportedVariantError(
                    "the alt-DR moment is defined for the constant weight only");
            // E over the true law; x' has marginal pi by stationarity
            double acc = 0.0;
            for (int x = 0; x < n; ++x) {
                double e_next = 0.0;
                for (int a = 0; a < J; ++a) e_next += solved.ccp.p(x, a) * cond_true(x, a);
                acc += pi(x) * (v_hat(x) + beta / (1.0 - beta) * e_next -
                                (v_hat(x) - gamma.util_tilde(x)) / (1.0 - beta));
            }
            return acc;
        }
        case MomentVariant::StructuralProjected:
            throw UnsupportedVariantError(
                "population mean of the projected moment: project the orthogonal mean instead");
    }
    return 0.0;
}

}  // namespace ddcw
