#include "ddcw/simulate.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ddcw/rng.hpp"
#include "json.hpp"

namespace ddcw {

SolvedModel solve_model(const ModelSpec& model, const SolveOptions& opts) {
    model.validate();
    SolvedModel s;
    s.value = solve_value_emax(model, opts);
    s.q = choice_specific_values(model, s.value);
    s.ccp.p.resize(model.n_states(), model.n_actions());
    for (int x = 0; x < model.n_states(); ++x)
        s.ccp.p.row(x) = ccp_from_values(s.q.row(x).transpose()).transpose();
    s.p_policy = policy_transition_matrix(s.ccp, model.kernel);
    s.pi = stationary_distribution(s.p_policy);
    return s;
}

const char* to_string(SamplingMode mode) {
    return mode == SamplingMode::IIDFromStationary ? "iid_from_stationary" : "single_long_path";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "iid_from_stationary") return SamplingMode::IIDFromStationary;
    if (s == "single_long_path") return SamplingMode::SingleLongPath;
    throw ConfigError("unknown sampling mode '" + s + "'");
}

namespace {

int sample_row(SplitMix64& rng, const Eigen::MatrixXd& m, int row) {
    double u = rng.uniform();
    double acc = 0.0;
    const int n = static_cast<int>(m.cols());
    for (int j = 0; j + 1 < n; ++j) {
        acc += m(row, j);
        if (u < acc) return j;
    }
    return n - 1;
}

int sample_vec(SplitMix64& rng, const Eigen::VectorXd& pmf) {
    double u = rng.uniform();
    double acc = 0.0;
    const int n = static_cast<int>(pmf.size());
    for (int j = 0; j + 1 < n; ++j) {
        acc += pmf(j);
        if (u < acc) return j;
    }
    return n - 1;
}

}  // namespace

Dataset simulate(const ModelSpec& model, const SolvedModel& solved, std::int64_t n,
                 std::uint64_t seed, SamplingMode mode) {
    if (n <= 0) throw InvalidArgumentError("simulate: n must be positive");
    Dataset data;
    data.seed = seed;
    data.mode = mode;
    data.records.reserve(static_cast<std::size_t>(n));
    SplitMix64 rng(seed);

    if (mode == SamplingMode::IIDFromStationary) {
        for (std::int64_t i = 0; i < n; ++i) {
            const int x = sample_vec(rng, solved.pi.pi);
            const int a = sample_row(rng, solved.ccp.p, x);
            const int xn = sample_row(rng, model.kernel.f[a], x);
            data.records.push_back({x, a, xn});
        }
    } else {
        const auto burn_in = 10 * static_cast<std::int64_t>(std::ceil(1.0 / (1.0 - model.beta)));
        int x = sample_vec(rng, solved.pi.pi);
        for (std::int64_t i = 0; i < burn_in; ++i) {
            const int a = sample_row(rng, solved.ccp.p, x);
            x = sample_row(rng, model.kernel.f[a], x);
        }
        for (std::int64_t i = 0; i < n; ++i) {
            const int a = sample_row(rng, solved.ccp.p, x);
            const int xn = sample_row(rng, model.kernel.f[a], x);
            data.records.push_back({x, a, xn});
            x = xn;
        }
    }
    return data;
}

Dataset simulate(const ModelSpec& model, std::int64_t n, std::uint64_t seed, SamplingMode mode) {
    return simulate(model, solve_model(model), n, seed, mode);
}

double true_theta(const SolvedModel& solved, const WeightSpec& w) {
    return (solved.pi.pi.array() * w.w.array() * solved.value.v.array()).sum();
}

double true_theta(const ModelSpec& model, const WeightSpec& w) {
    return true_theta(solve_model(model), w);
}

namespace {

bool has_gz_suffix(const std::string& path) {
    return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

void write_all(const std::string& path, const std::string& content) {
    if (has_gz_suffix(path)) {
        gzFile gz = gzopen(path.c_str(), "wb");
        if (!gz) throw Error("cannot open " + path + " for writing");
        const int written = gzwrite(gz, content.data(), static_cast<unsigned>(content.size()));
        gzclose(gz);
        if (written != static_cast<int>(content.size()))
            throw Error("short gzip write to " + path);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << content;
}

std::string read_all(const std::string& path) {
    if (has_gz_suffix(path)) {
        gzFile gz = gzopen(path.c_str(), "rb");
        if (!gz) throw Error("cannot open " + path);
        std::string content;
        char buf[1 << 16];
        int got;
        while ((got = gzread(gz, buf, sizeof(buf))) > 0) content.append(buf, got);
        gzclose(gz);
        return content;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void Dataset::write_csv(const std::string& path) const {
    std::string content = "x,a,x_next\n";
    content.reserve(content.size() + records.size() * 12);
    char line[48];
    for (const auto& r : records) {
        std::snprintf(line, sizeof(line), "%d,%d,%d\n", r.x, r.a, r.x_next);
        content += line;
    }
    write_all(path, content);
}

Dataset Dataset::read_csv(const std::string& path) {
    const std::string content = read_all(path);
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || line != "x,a,x_next")
        throw ConfigError("dataset " + path + " has unexpected header '" + line + "'");
    Dataset data;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Record r{};
        if (std::sscanf(line.c_str(), "%d,%d,%d", &r.x, &r.a, &r.x_next) != 3)
            throw ConfigError("dataset " + path + " line " + std::to_string(lineno) +
                              " is malformed: '" + line + "'");
        if (r.x < 0 || r.a < 0 || r.x_next < 0)
            throw ConfigError("dataset " + path + " line " + std::to_string(lineno) +
                              " has a negative index");
        data.records.push_back(r);
    }
    return data;
}

std::string Dataset::sidecar_json(const ModelSpec& model, const std::string& manifest) const {
    nlohmann::json j;
    j["seed"] = seed;
    j["n"] = records.size();
    j["mode"] = to_string(mode);
    j["model_hash"] = hex_u64(model.hash());
    if (!manifest.empty()) j["manifest"] = manifest;
    return j.dump(2) + "\n";
}

}  // namespace ddcw
