#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddcw/diagnostics.hpp"
#include "ddcw/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitEstimation = 3;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ddcw::ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ddcw::Error("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Appends a manifest reference so every JSON artifact points back at its run.
void write_json_artifact(const fs::path& path, const std::string& body) {
    json j = json::parse(body);
    j["manifest"] = "manifest.json";
    atomic_write(path, j.dump(2) + "\n");
}

void write_manifest(const fs::path& out_dir, const ddcw::ExperimentConfig& config,
                    const std::string& command, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json j;
    j["tool"] = "ddcw";
    j["version"] = ddcw::kVersion;
    j["command"] = command;
    j["config_hash"] = ddcw::hex_u64(config.hash());
    j["master_seed"] = config.master_seed;
    j["rng"] = ddcw::rng_algorithm_name();
    j["rng_stream_discipline"] = "stream k = mix64(master_seed + golden*(k+1)), one per replication";
    j["created_utc"] = utc_timestamp();
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    atomic_write(out_dir / "manifest.json", j.dump(2) + "\n");
}

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> folds;
    std::optional<int> threads;
    std::vector<std::string> variants;
    bool pooled_diagnostic = false;
    bool oracle = false;
    bool gzip = false;
};

ddcw::ExperimentConfig load_config(const std::string& path, const CliOverrides& ov) {
    ddcw::ExperimentConfig config = ddcw::ExperimentConfig::from_json(read_file(path));
    if (ov.seed) config.master_seed = *ov.seed;
    if (ov.folds) config.folds = *ov.folds;
    if (ov.threads) config.threads = *ov.threads;
    if (ov.oracle) config.oracle_nuisances = true;
    if (!ov.variants.empty()) {
        config.variants.clear();
        for (const auto& v : ov.variants)
            config.variants.push_back(ddcw::moment_variant_from_string(v));
    }
    if (config.folds < 2 && !ov.pooled_diagnostic)
        throw ddcw::ConfigError(
            "cross-fitting requires K >= 2 folds; pass --pooled-diagnostic to run the K=1 "
            "pooled fit");
    config.validate();
    return config;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const CliOverrides& ov) {
    const ddcw::ExperimentConfig config = load_config(config_path, ov);
    fs::create_directories(out_dir);
    const std::string dataset_name = ov.gzip ? "dataset.csv.gz" : "dataset.csv";
    write_manifest(out_dir, config, "simulate", {config_path},
                   {dataset_name, "dataset.json", "model.json"});

    const ddcw::ModelSpec model = config.build_model();
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    const ddcw::Dataset data =
        ddcw::simulate(model, solved, config.n_grid.front(), config.master_seed, config.mode);
    data.write_csv((fs::path(out_dir) / dataset_name).string());
    atomic_write(fs::path(out_dir) / "dataset.json", data.sidecar_json(model, "manifest.json"));
    atomic_write(fs::path(out_dir) / "model.json", model.to_json(2) + "\n");
    std::cout << "wrote " << data.n() << " records to " << out_dir << "/" << dataset_name << "\n";
    return kExitOk;
}

int cmd_estimate(const std::string& config_path, const std::string& data_path,
                 const std::string& out_dir, const CliOverrides& ov) {
    const ddcw::ExperimentConfig config = load_config(config_path, ov);
    fs::create_directories(out_dir);
    std::vector<std::string> outputs;
    for (auto v : config.variants)
        outputs.push_back(std::string("estimate_") + ddcw::to_string(v) + ".json");
    write_manifest(out_dir, config, "estimate", {config_path, data_path}, outputs);

    const ddcw::ModelSpec model = config.build_model();
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    const ddcw::WeightSpec w = ddcw::resolve_weight(config.weight, model.states, solved.pi);
    const ddcw::Dataset data = ddcw::Dataset::read_csv(data_path);
    if (data.n() == 0) throw ddcw::ConfigError("dataset " + data_path + " is empty");

    try {
        const ddcw::FoldAssignment folds = ddcw::FoldAssignment::make(
            data.n(), config.folds, ddcw::SplitMix64::substream(config.master_seed, 0xF01Dull));
        ddcw::FirstStageOptions fs_opts = config.first_stage;
        fs_opts.shrink_eta = config.eta;
        std::vector<ddcw::NuisanceSet> nuisances;
        if (config.oracle_nuisances) {
            nuisances.assign(static_cast<std::size_t>(config.folds),
                             ddcw::oracle_nuisances(model, solved, w, fs_opts));
        } else {
            nuisances = ddcw::fit_folds(data, model, w, folds, fs_opts);
        }

        for (auto variant : config.variants) {
            ddcw::CrossFitOptions opts;
            Eigen::VectorXd g;
            if (variant == ddcw::MomentVariant::StructuralProjected) {
                g = ddcw::g_delta(model.utility, solved.pi.pi, nuisances.front().lambda_hat,
                                  nuisances.front().p_hat);
                opts.structural_g = &g;
            }
            ddcw::EstimateReport report =
                ddcw::cross_fit_estimate(data, folds, nuisances, variant, w, model.beta, opts);
            report.seed = config.master_seed;
            const std::string name = std::string("estimate_") + ddcw::to_string(variant) + ".json";
            write_json_artifact(fs::path(out_dir) / name, report.to_json());
            std::cout << ddcw::to_string(variant) << ": theta_hat=" << report.theta_hat
                      << " se=" << report.se << " ci=[" << report.ci_lo << "," << report.ci_hi
                      << "]\n";
        }
    } catch (const ddcw::ConfigError&) {
        throw;
    } catch (const ddcw::Error& e) {
        std::cerr << "estimation error: " << e.what() << "\n";
        return kExitEstimation;
    }
    return kExitOk;
}

int cmd_diagnose(const std::string& config_path, const std::string& out_dir,
                 const CliOverrides& ov) {
    const ddcw::ExperimentConfig config = load_config(config_path, ov);
    fs::create_directories(out_dir);
    write_manifest(out_dir, config, "diagnose", {config_path},
                   {"orthogonality.json", "double_robustness.json", "lemma_suite.json",
                    "summary.json"});

    const ddcw::ModelSpec model = config.build_model();
    const ddcw::SolvedModel solved = ddcw::solve_model(model);
    const ddcw::WeightSpec w = ddcw::resolve_weight(config.weight, model.states, solved.pi);

    const ddcw::OrthogonalityReport orth = ddcw::run_orthogonality_check(
        model, solved, w, config.tolerances, ddcw::SplitMix64::substream(config.master_seed, 1));

    // the lambda channel needs a noncentered weight to be non-trivial
    ddcw::WeightSpec dr_weight = w;
    if (w.constant()) {
        std::vector<int> shift(static_cast<std::size_t>(model.n_states()));
        for (int x = 0; x < model.n_states(); ++x) shift[x] = (x + 1) % model.n_states();
        dr_weight = ddcw::build_counterfactual_weight(shift, solved.pi);
    }
    const ddcw::DoubleRobustnessReport dr = ddcw::run_double_robustness_check(
        model, solved, dr_weight, config.eta_grid, config.tolerances);

    ddcw::RandomModelConfig base = config.generator.value_or(ddcw::RandomModelConfig{});
    base.level_scale = 0.0;  // lemma suite runs on the plain generator
    const ddcw::LemmaSuiteReport lemmas = ddcw::run_lemma_suite(
        config.lemma_models, ddcw::SplitMix64::substream(config.master_seed, 2), base,
        config.tolerances);

    write_json_artifact(fs::path(out_dir) / "orthogonality.json", orth.to_json());
    write_json_artifact(fs::path(out_dir) / "double_robustness.json", dr.to_json());
    write_json_artifact(fs::path(out_dir) / "lemma_suite.json", lemmas.to_json());

    const bool pass = orth.all_pass() && dr.pass && lemmas.all_pass();
    json summary;
    summary["orthogonality_pass"] = orth.all_pass();
    summary["double_robustness_pass"] = dr.pass;
    summary["lemma_suite_pass"] = lemmas.all_pass();
    summary["all_pass"] = pass;
    write_json_artifact(fs::path(out_dir) / "summary.json", summary.dump());
    std::cout << "diagnose: " << (pass ? "all checks passed" : "CHECK FAILURES") << "\n";
    return pass ? kExitOk : kExitCheckFailure;
}

int cmd_coverage(const std::string& config_path, const std::string& out_dir,
                 const CliOverrides& ov) {
    const ddcw::ExperimentConfig config = load_config(config_path, ov);
    fs::create_directories(out_dir);
    write_manifest(out_dir, config, "coverage", {config_path},
                   {"coverage.csv", "coverage.json"});

    const ddcw::CoverageTable table = ddcw::run_coverage(config);
    atomic_write(fs::path(out_dir) / "coverage.csv", table.to_csv());
    write_json_artifact(fs::path(out_dir) / "coverage.json", table.to_json());
    for (const auto& cell : table.cells)
        std::cout << ddcw::to_string(cell.variant) << " n=" << cell.n << " eta=" << cell.eta
                  << " coverage=" << cell.coverage << (cell.gating ? " [gating]" : "")
                  << (cell.pass ? "" : " FAIL") << "\n";
    return table.all_pass() ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Welfare estimation and structural diagnostics for finite-state dynamic "
                 "discrete choice models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path;
    CliOverrides ov;

    const auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        cmd->add_option("--config", config_path, "experiment config JSON")->required();
        if (needs_out) cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--seed", ov.seed, "override master seed");
        cmd->add_option("--threads", ov.threads, "worker threads (identical results for any value)");
        cmd->add_option("--folds", ov.folds, "override fold count K");
        cmd->add_flag("--pooled-diagnostic", ov.pooled_diagnostic, "allow the K=1 pooled fit");
        cmd->add_flag("--oracle-nuisances", ov.oracle, "use exact model nuisances (skip estimation)");
    };

    CLI::App* sim = app.add_subcommand("simulate", "draw a dataset from the stationary process");
    add_common(sim);
    sim->add_flag("--gzip", ov.gzip, "write dataset.csv.gz");

    CLI::App* est = app.add_subcommand("estimate", "cross-fitted welfare estimates from a dataset");
    add_common(est);
    est->add_option("--data", data_path, "dataset CSV (optionally .gz)")->required();
    est->add_option("--variant", ov.variants,
                    "estimator variant(s): plugin|orthogonal|alt_dr|structural");

    CLI::App* diag = app.add_subcommand("diagnose",
                                        "orthogonality, double-robustness and operator checks");
    add_common(diag);

    CLI::App* cov = app.add_subcommand("coverage", "Monte Carlo confidence-interval coverage");
    add_common(cov);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, ov);
        if (est->parsed()) return cmd_estimate(config_path, data_path, out_dir, ov);
        if (diag->parsed()) return cmd_diagnose(config_path, out_dir, ov);
        if (cov->parsed()) return cmd_coverage(config_path, out_dir, ov);
    } catch (const ddcw::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ddcw::EstimationError& e) {
        std::cerr << "estimation error: " << e.what() << "\n";
        return kExitEstimation;
    } catch (const ddcw::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEstimation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEstimation;
    }
    return kExitOk;
}
