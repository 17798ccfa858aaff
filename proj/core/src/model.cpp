#include "ddcw/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace ddcw {

using nlohmann::json;

StateSpace StateSpace::with_one_hot(int n) {
    StateSpace s;
    s.n_states = n;
    s.features = Eigen::MatrixXd::Identity(n, n);
    return s;
}

void StateSpace::validate() const {
    if (n_states < 2)
        throw InvalidArgumentError("states.n_states must be >= 2, got " + std::to_string(n_states));
    if (features.size() == 0 || features.rows() != n_states)
        throw ShapeError("states.features must have one row per state (" +
                         std::to_string(n_states) + "), got " + std::to_string(features.rows()));
    if (features.cols() < 1) throw ShapeError("states.features must have dimension d >= 1");
    if (!features.allFinite()) throw InvalidArgumentError("states.features has non-finite entries");
    if (!labels.empty() && static_cast<int>(labels.size()) != n_states)
        throw ShapeError("states.labels size mismatch");
}

void ActionSet::validate() const {
    if (n_actions < 2)
        throw InvalidArgumentError("actions.n_actions must be >= 2, got " + std::to_string(n_actions));
}

void UtilitySpec::validate(int n_states, int n_actions) const {
    if (u.rows() != n_states || u.cols() != n_actions)
        throw ShapeError("utility matrix must be n_states x n_actions");
    for (int x = 0; x < u.rows(); ++x)
        for (int a = 0; a < u.cols(); ++a)
            if (!std::isfinite(u(x, a)))
                throw InvalidArgumentError("utilities[" + std::to_string(x) + "][" +
                                           std::to_string(a) + "] is not finite");
    if (!gradient.empty()) {
        if (delta.size() != static_cast<Eigen::Index>(gradient.size()))
            throw ShapeError("utility.delta dimension must match gradient tensor");
        Eigen::MatrixXd rebuilt = Eigen::MatrixXd::Zero(n_states, n_actions);
        for (std::size_t k = 0; k < gradient.size(); ++k) {
            if (gradient[k].rows() != n_states || gradient[k].cols() != n_actions)
                throw ShapeError("utility.gradient[" + std::to_string(k) +
                                 "] must be n_states x n_actions");
            rebuilt += delta(static_cast<Eigen::Index>(k)) * gradient[k];
        }
        if ((rebuilt - u).cwiseAbs().maxCoeff() > 1e-12)
            throw InvalidArgumentError(
                "parameterized utility does not reproduce phi'delta exactly");
    }
}

void TransitionKernel::validate(double tol) const {
    if (f.empty()) throw ShapeError("kernel has no actions");
    const int n = n_states();
    for (int a = 0; a < n_actions(); ++a) {
        if (f[a].rows() != n || f[a].cols() != n)
            throw ShapeError("kernel action " + std::to_string(a) + " must be square n_states");
        for (int x = 0; x < n; ++x) {
            double sum = 0.0;
            for (int y = 0; y < n; ++y) {
                const double v = f[a](x, y);
                if (!std::isfinite(v) || v < 0.0)
                    throw InvalidArgumentError("kernel[" + std::to_string(x) + "][" +
                                               std::to_string(a) + "][" + std::to_string(y) +
                                               "] is negative or non-finite");
                sum += v;
            }
            if (std::abs(sum - 1.0) > tol)
                throw InvalidArgumentError("kernel[" + std::to_string(x) + "][" +
                                           std::to_string(a) + "] sums to " + format_double(sum) +
                                           ", expected 1 within " + format_double(tol));
        }
    }
}

void CCPMatrix::validate(double tol) const {
    for (int x = 0; x < p.rows(); ++x) {
        double sum = 0.0;
        for (int a = 0; a < p.cols(); ++a) {
            const double v = p(x, a);
            if (!std::isfinite(v) || v < 0.0)
                throw InvalidArgumentError("ccp[" + std::to_string(x) + "][" + std::to_string(a) +
                                           "] is negative or non-finite");
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol)
            throw InvalidArgumentError("ccp[" + std::to_string(x) + "] sums to " +
                                       format_double(sum) + ", expected 1 within " +
                                       format_double(tol));
    }
}

bool CCPMatrix::interior(double eps) const {
    return p.minCoeff() >= eps && p.maxCoeff() <= 1.0 - eps;
}

void ModelSpec::validate() const {
    states.validate();
    actions.validate();
    utility.validate(states.n_states, actions.n_actions);
    if (!(beta > 0.0 && beta < 1.0))
        throw InvalidArgumentError("beta must lie in (0,1), got " + format_double(beta));
    kernel.validate();
    if (kernel.n_actions() != actions.n_actions || kernel.n_states() != states.n_states)
        throw ShapeError("kernel shape does not match states/actions");
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const char* name) {
    if (!j.is_array() || j.empty()) throw ConfigError(std::string(name) + " must be a 2-d array");
    const auto rows = j.size();
    const auto cols = j[0].size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols)
            throw ConfigError(std::string(name) + "[" + std::to_string(i) + "] has ragged shape");
        for (std::size_t k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

}  // namespace

std::string ModelSpec::to_json(int indent) const {
    json j;
    j["n_states"] = states.n_states;
    j["n_actions"] = actions.n_actions;
    j["beta"] = beta;
    j["utilities"] = matrix_to_json(utility.u);
    json kern = json::array();
    for (int x = 0; x < states.n_states; ++x) {
        json per_action = json::array();
        for (int a = 0; a < actions.n_actions; ++a) {
            json row = json::array();
            for (int y = 0; y < states.n_states; ++y) row.push_back(kernel.f[a](x, y));
            per_action.push_back(std::move(row));
        }
        kern.push_back(std::move(per_action));
    }
    j["kernel"] = std::move(kern);
    j["features"] = matrix_to_json(states.features);
    if (!states.labels.empty()) j["labels"] = states.labels;
    if (utility.parameterized()) {
        json grad = json::array();
        for (const auto& g : utility.gradient) grad.push_back(matrix_to_json(g));
        j["utility_gradient"] = std::move(grad);
        json d = json::array();
        for (Eigen::Index k = 0; k < utility.delta.size(); ++k) d.push_back(utility.delta(k));
        j["delta"] = std::move(d);
    }
    return indent >= 0 ? j.dump(indent) : j.dump();
}

namespace {

ModelSpec model_from_parsed(const json& j);

}  // namespace

ModelSpec ModelSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model JSON parse error: ") + e.what());
    }
    for (const char* field : {"n_states", "n_actions", "beta", "utilities", "kernel"})
        if (!j.contains(field)) throw ConfigError(std::string("model is missing field '") + field + "'");
    try {
        return model_from_parsed(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model JSON: ") + e.what());
    }
}

namespace {

ModelSpec model_from_parsed(const json& j) {
    ModelSpec m;
    m.states.n_states = j["n_states"].get<int>();
    m.actions.n_actions = j["n_actions"].get<int>();
    m.beta = j["beta"].get<double>();
    m.utility.u = matrix_from_json(j["utilities"], "utilities");

    const auto& kern = j["kernel"];
    if (!kern.is_array() || static_cast<int>(kern.size()) != m.states.n_states)
        throw ConfigError("kernel must have n_states outer entries");
    m.kernel.f.assign(m.actions.n_actions,
                      Eigen::MatrixXd::Zero(m.states.n_states, m.states.n_states));
    for (int x = 0; x < m.states.n_states; ++x) {
        if (static_cast<int>(kern[x].size()) != m.actions.n_actions)
            throw ConfigError("kernel[" + std::to_string(x) + "] must have n_actions entries");
        for (int a = 0; a < m.actions.n_actions; ++a) {
            const auto& row = kern[x][a];
            if (static_cast<int>(row.size()) != m.states.n_states)
                throw ConfigError("kernel[" + std::to_string(x) + "][" + std::to_string(a) +
                                  "] must have n_states entries");
            for (int y = 0; y < m.states.n_states; ++y)
                m.kernel.f[a](x, y) = row[y].get<double>();
        }
    }

    if (j.contains("features"))
        m.states.features = matrix_from_json(j["features"], "features");
    else
        m.states.features = Eigen::MatrixXd::Identity(m.states.n_states, m.states.n_states);
    if (j.contains("labels")) m.states.labels = j["labels"].get<std::vector<std::string>>();
    if (j.contains("utility_gradient")) {
        if (!j.contains("delta")) throw ConfigError("utility_gradient requires delta");
        for (const auto& g : j["utility_gradient"])
            m.utility.gradient.push_back(matrix_from_json(g, "utility_gradient"));
        const auto& d = j["delta"];
        m.utility.delta.resize(static_cast<Eigen::Index>(d.size()));
        for (std::size_t k = 0; k < d.size(); ++k)
            m.utility.delta(static_cast<Eigen::Index>(k)) = d[k].get<double>();
    }

    m.validate();
    return m;
}

}  // namespace

std::uint64_t ModelSpec::hash() const { return fnv1a64(to_json()); }

double emax_logit(const Eigen::VectorXd& values_per_action) {
    if (values_per_action.size() < 2)
        throw InvalidArgumentError("emax_logit requires J >= 2 choice-specific values");
    if (!values_per_action.allFinite())
        throw InvalidArgumentError("emax_logit: non-finite input value");
    const double vmax = values_per_action.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index a = 0; a < values_per_action.size(); ++a)
        sum += std::exp(values_per_action(a) - vmax);
    return vmax + std::log(sum) + kEulerGamma;
}

Eigen::VectorXd ccp_from_values(const Eigen::VectorXd& values_per_action) {
    if (values_per_action.size() < 2)
        throw InvalidArgumentError("ccp_from_values requires J >= 2 values");
    if (!values_per_action.allFinite())
        throw InvalidArgumentError("ccp_from_values: non-finite input value");
    const double vmax = values_per_action.maxCoeff();
    Eigen::VectorXd e = (values_per_action.array() - vmax).exp();
    return e / e.sum();
}

Eigen::VectorXd expected_shock_logit(const Eigen::VectorXd& p_row, const ClipPolicy& clip) {
    Eigen::VectorXd out(p_row.size());
    for (Eigen::Index a = 0; a < p_row.size(); ++a)
        out(a) = kEulerGamma - std::log(clip.apply(p_row(a)));
    return out;
}

Eigen::VectorXd expected_current_utility(const Eigen::MatrixXd& u, const CCPMatrix& p,
                                         const ClipPolicy& clip) {
    if (u.rows() != p.p.rows() || u.cols() != p.p.cols())
        throw ShapeError("expected_current_utility: utility/CCP shape mismatch");
    Eigen::VectorXd out(u.rows());
    for (int x = 0; x < u.rows(); ++x) {
        double acc = 0.0;
        for (int a = 0; a < u.cols(); ++a) {
            const double pa = p.p(x, a);
            if (pa == 0.0) continue;  // 0 * log 0 contributes 0
            acc += pa * (u(x, a) + kEulerGamma - std::log(clip.apply(pa)));
        }
        out(x) = acc;
    }
    return out;
}

Eigen::VectorXd expected_current_utility(const ModelSpec& model, const CCPMatrix& p,
                                         const ClipPolicy& clip) {
    return expected_current_utility(model.utility.u, p, clip);
}

}  // namespace ddcw
