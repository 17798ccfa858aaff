#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ddcw/model.hpp"
#include "ddcw/stationary.hpp"

namespace ddcw {

enum class WeightKind { Constant, CounterfactualMap };

// Unresolved weight description as it appears in experiment configs:
// {"kind":"constant"} or {"kind":"counterfactual","map":[...]}.
struct WeightConfig {
    WeightKind kind = WeightKind::Constant;
    std::vector<int> map;

    std::string to_json() const;
    static WeightConfig from_json(const std::string& text);
};

struct WeightSpec {
    WeightKind kind = WeightKind::Constant;
    std::vector<int> map;  // populated for CounterfactualMap
    Eigen::VectorXd w;     // resolved weight per state

    bool constant() const { return kind == WeightKind::Constant; }
};

// w == 1: theta is the plain average welfare E_pi[V].
WeightSpec build_constant_weight(const StateSpace& states);

// Counterfactual map t: theta = E[V(t(x)) - V(x)], realized as the pmf-ratio
// weight w(x) = pi_t(x)/pi(x) - 1 with pi_t the law of t(X), X ~ pi.
WeightSpec build_counterfactual_weight(const std::vector<int>& t,
                                       const StationaryDistribution& pi);

WeightSpec resolve_weight(const WeightConfig& config, const StateSpace& states,
                          const StationaryDistribution& pi);

}  // namespace ddcw
