#include "ddcw/weights.hpp"

#include "json.hpp"

namespace ddcw {

using nlohmann::json;

std::string WeightConfig::to_json() const {
    json j;
    if (kind == WeightKind::Constant) {
        j["kind"] = "constant";
    } else {
        j["kind"] = "counterfactual";
        j["map"] = map;
    }
    return j.dump();
}

WeightConfig WeightConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    WeightConfig c;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        c.kind = WeightKind::Constant;
    } else if (kind == "counterfactual") {
        c.kind = WeightKind::CounterfactualMap;
        c.map = j.at("map").get<std::vector<int>>();
    } else if (kind == "average_partial_effect" || kind == "marginal_shift") {
        throw ConfigError("weight kind '" + kind +
                          "' requires density derivatives of a continuous state law and is not "
                          "supported; use 'constant' or 'counterfactual'");
    } else {
        throw ConfigError("unknown weight kind '" + kind + "'");
    }
    return c;
}

WeightSpec build_constant_weight(const StateSpace& states) {
    WeightSpec w;
    w.kind = WeightKind::Constant;
    w.w = Eigen::VectorXd::Ones(states.n_states);
    return w;
}

WeightSpec build_counterfactual_weight(const std::vector<int>& t,
                                       const StationaryDistribution& pi) {
    const int n = static_cast<int>(pi.pi.size());
    if (static_cast<int>(t.size()) != n)
        throw ShapeError("counterfactual map must be total on states");
    for (int x = 0; x < n; ++x)
        if (t[x] < 0 || t[x] >= n)
            throw InvalidArgumentError("counterfactual map[" + std::to_string(x) +
                                       "] = " + std::to_string(t[x]) + " out of range");

    Eigen::VectorXd pi_t = Eigen::VectorXd::Zero(n);
    for (int y = 0; y < n; ++y) pi_t(t[y]) += pi.pi(y);

    WeightSpec w;
    w.kind = WeightKind::CounterfactualMap;
    w.map = t;
    w.w.resize(n);
    for (int x = 0; x < n; ++x) {
        if (pi.pi(x) <= 0.0) {
            if (pi_t(x) > 0.0)
                throw SupportViolationError("counterfactual weight undefined: pi(" +
                                            std::to_string(x) + ") = 0 but pi_t(" +
                                            std::to_string(x) + ") > 0");
            w.w(x) = -1.0;
            continue;
        }
        w.w(x) = pi_t(x) / pi.pi(x) - 1.0;
    }
    return w;
}

WeightSpec resolve_weight(const WeightConfig& config, const StateSpace& states,
                          const StationaryDistribution& pi) {
    if (config.kind == WeightKind::Constant) return build_constant_weight(states);
    return build_counterfactual_weight(config.map, pi);
}

}  // namespace ddcw
