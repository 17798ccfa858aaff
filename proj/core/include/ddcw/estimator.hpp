#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddcw/first_stage.hpp"

namespace ddcw {

enum class MomentVariant { PlugIn, Orthogonal, OrthogonalAltDR, StructuralProjected };

const char* to_string(MomentVariant v);
MomentVariant moment_variant_from_string(const std::string& s);

// How the conditional expectation inside the orthogonal correction is taken.
// RealizedAction subtracts E_fhat[Vhat | x, a_i] at the observed action; the
// correction is then exactly conditionally mean-zero under the true kernel for
// any nuisance set, which is what delivers first-order insensitivity in every
// nuisance direction. ModelImplied subtracts sum_a phat(a|x) E_fhat[Vhat|x,a];
// by the value recursion that equals (Vhat(x) - U~(x;phat))/beta for any
// (phat, fhat), which is the rewriting behind the w==1 alternative form.
enum class ConditionalMeanForm { RealizedAction, ModelImplied };

// Fold-level precomputation for O(1) per-record moment evaluation.
struct MomentContext {
    const NuisanceSet* gamma = nullptr;
    Eigen::MatrixXd cond_value;    // E_fhat[Vhat | x, a]
    Eigen::VectorXd mixture_cond;  // sum_a phat(a|x) E_fhat[Vhat|x,a]

    static MomentContext from(const NuisanceSet& gamma);
};

double moment_plugin(const Dataset::Record& z, const MomentContext& ctx, const WeightSpec& w);

double moment_orthogonal(const Dataset::Record& z, const MomentContext& ctx, const WeightSpec& w,
                         double beta,
                         ConditionalMeanForm form = ConditionalMeanForm::RealizedAction);

// w == 1 only: m = Vhat(x) + beta/(1-beta) Vhat(x') - (Vhat(x) - U~(x;phat))/(1-beta).
// Needs no transition-conditional expectation at evaluation time.
double moment_orthogonal_alt_dr(const Dataset::Record& z, const MomentContext& ctx,
                                const WeightSpec& w, double beta);

// Jacobian of the welfare target in the structural utility parameter:
// G[k] = sum_x pi(x) lambda(x) sum_a p(a|x) du/ddelta_k(x,a).
Eigen::VectorXd g_delta(const UtilitySpec& utility, const Eigen::VectorXd& pi,
                        const Eigen::VectorXd& lambda, const CCPMatrix& p);

// Scalar projection factor 1 - G'(G'G)^{-1}G. Identically 0 for any G != 0 (the
// displayed projector annihilates a scalar moment); G == 0 is an error. The
// degenerate outcome is surfaced by callers, not repaired.
double structural_projection_factor(const Eigen::VectorXd& g);

double moment_structural_projected(const Dataset::Record& z, const MomentContext& ctx,
                                   const WeightSpec& w, double beta, const Eigen::VectorXd& g);

struct EstimateReport {
    double theta_hat = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    MomentVariant variant = MomentVariant::Orthogonal;
    std::size_t n = 0;
    int k_folds = 0;
    std::uint64_t seed = 0;
    std::string nuisance_provenance;
    std::vector<std::string> degenerate_flags;

    std::string to_json(int indent = 2) const;
};

struct CrossFitOptions {
    ConditionalMeanForm form = ConditionalMeanForm::RealizedAction;
    ClipPolicy clip;
    const Eigen::VectorXd* structural_g = nullptr;  // required for StructuralProjected
    double se_floor = 1e-12;
};

// theta_hat = (1/N) sum_k sum_{i in I_k} m(z_i; gamma_k); influence-function
// se; 95% CI. Summation over records is pairwise in record order, so the
// reduction is deterministic for any parallel schedule upstream.
EstimateReport cross_fit_estimate(const Dataset& data, const FoldAssignment& folds,
                                  const std::vector<NuisanceSet>& nuisances,
                                  MomentVariant variant, const WeightSpec& w, double beta,
                                  const CrossFitOptions& opts = {});

// Per-record moment values with fold bookkeeping (diagnostics hook).
struct MomentEvaluation {
    std::vector<double> m;
    std::vector<int> fold_of;
    MomentVariant variant = MomentVariant::Orthogonal;
};

MomentEvaluation evaluate_moments(const Dataset& data, const FoldAssignment& folds,
                                  const std::vector<NuisanceSet>& nuisances,
                                  MomentVariant variant, const WeightSpec& w, double beta,
                                  const CrossFitOptions& opts = {});

// Exact population mean of a moment under the true law of `solved` (full
// enumeration over (x,a,x') with weights pi(x) p0(a|x) f0(x'|x,a)), for a fixed
// nuisance set. Matrix-algebra fast path; the test suite cross-checks it
// against a literal triple loop.
double population_moment_mean(const SolvedModel& solved, const TransitionKernel& true_kernel,
                              const NuisanceSet& gamma, MomentVariant variant,
                              const WeightSpec& w, double beta,
                              const CrossFitOptions& opts = {});

}  // namespace ddcw
