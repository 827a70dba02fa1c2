#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sinkem/em.hpp"
#include "sinkem/experiments.hpp"
#include "sinkem/metrics.hpp"
#include "sinkem/theory.hpp"

using namespace sinkem;

namespace {

int cmd_fit(const std::string& model_path, const std::string& data_path, const std::string& engine,
            const std::string& out_dir, int iterations, int sinkhorn_iterations, bool cov_update,
            double budget, bool verbose) {
    MixtureModel model = MixtureModel::load_json_file(model_path);
    Dataset data = Dataset::load_csv_file(data_path);

    EngineConfig config;
    config.engine = engine_from_name(engine);
    config.max_iterations = iterations;
    config.sinkhorn.max_iterations = sinkhorn_iterations;
    config.update_covariances = cov_update;
    if (budget > 0.0) config.time_budget_seconds = budget;
    config.validate();

    FitTrace trace = fit(model, data, config);

    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/trace.csv") << trace.to_csv();
    std::ofstream(out_dir + "/trace_header.json") << trace.header_json(config, data.seed) << "\n";
    trace.final_model.save_json_file(out_dir + "/final_model.json");
    if (verbose)
        std::cerr << "fit: " << trace.iterations.size() << " iterations, " << trace.termination_reason
                  << ", " << trace.weight_clamps << " weight clamps, " << trace.covariance_floor_events
                  << " covariance floors\n";
    return trace.termination_reason.rfind("degenerate_cluster", 0) == 0 ? 2 : 0;
}

int cmd_theory_check(double theta_star, double alpha_star, int nodes, double grid_step,
                     double tolerance, const std::string& report_path) {
    PopulationSpec spec;
    spec.theta_star = theta_star;
    spec.alpha_star = alpha_star;
    spec.quadrature_nodes = nodes;
    spec.validate();
    TheoryCheckOptions opt;
    opt.grid_step = grid_step;
    if (tolerance > 0.0) opt.coincidence_tolerance = tolerance;
    TheoryCheckReport report = run_theory_checks(spec, opt);
    std::cout << report.render();
    if (!report_path.empty()) std::ofstream(report_path) << report.render();
    return report.all_pass() ? 0 : 2;
}

ExperimentConfig load_experiment_config(const std::string& scenario, const std::string& config_path) {
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw InvalidInput("config: cannot open " + config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        ExperimentConfig cfg = ExperimentConfig::from_json(ss.str());
        if (!scenario.empty() && scenario != cfg.scenario)
            throw InvalidInput("config: scenario '" + cfg.scenario + "' does not match --scenario " + scenario);
        return cfg;
    }
    if (scenario.empty()) throw InvalidInput("scenario: provide --scenario or --config");
    return ExperimentConfig::defaults_for(scenario);
}

int cmd_experiment(const std::string& scenario, const std::string& config_path, const std::string& out_dir,
                   std::uint64_t seed, bool seed_set, const std::string& engine, int jobs, double budget,
                   int iterations, const std::string& error_mode, bool verbose) {
    ExperimentConfig cfg = load_experiment_config(scenario, config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed_set) cfg.root_seed = seed;
    if (!engine.empty()) cfg.engines = {engine};
    if (jobs > 0) cfg.jobs = jobs;
    if (budget > 0.0) cfg.time_budget_seconds = budget;
    if (iterations > 0) cfg.iterations = iterations;
    if (!error_mode.empty()) cfg.error_mode = error_mode;
    cfg.validate();
    if (verbose) std::cerr << "experiment " << cfg.scenario << " -> " << cfg.output_dir << "\n";
    ExperimentOutput out = run_experiment(cfg);
    out.write(cfg.output_dir);
    if (verbose) std::cerr << out.runs.rows.size() << " runs written\n";
    return 0;
}

int cmd_replay(const std::string& dir, int row_index, const std::string& key_spec, bool verbose) {
    std::ifstream meta_in(dir + "/metadata.json");
    if (!meta_in) throw InvalidInput("replay: cannot open " + dir + "/metadata.json");
    std::stringstream meta;
    meta << meta_in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(meta.str());
    ExperimentConfig cfg = ExperimentConfig::from_json(j.at("config").dump());

    std::ifstream runs_in(dir + "/runs.csv");
    if (!runs_in) throw InvalidInput("replay: cannot open " + dir + "/runs.csv");
    std::string header;
    std::getline(runs_in, header);
    std::vector<std::string> columns;
    {
        std::istringstream hs(header);
        std::string c;
        while (std::getline(hs, c, ',')) columns.push_back(c);
    }
    std::map<std::string, std::string> want;
    if (!key_spec.empty()) {
        std::istringstream ks(key_spec);
        std::string kv;
        while (std::getline(ks, kv, ',')) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw InvalidInput("replay: bad --key entry '" + kv + "'");
            want[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
    }
    std::string line;
    int idx = 0;
    while (std::getline(runs_in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cells.push_back(c);
        bool selected = want.empty() ? (idx == row_index) : [&] {
            for (const auto& [k, v] : want) {
                auto it = std::find(columns.begin(), columns.end(), k);
                if (it == columns.end()) return false;
                if (cells[it - columns.begin()] != v) return false;
            }
            return true;
        }();
        if (selected) {
            std::map<std::string, std::string> key;
            for (std::size_t i = 0; i < columns.size() && i < cells.size(); ++i) key[columns[i]] = cells[i];
            std::uint64_t recorded = std::strtoull(key["trace_hash"].c_str(), nullptr, 10);
            std::uint64_t replayed = replay_trace_hash(cfg, key);
            if (verbose)
                std::cerr << "row " << idx << ": recorded " << recorded << " replayed " << replayed << "\n";
            if (recorded == replayed) {
                std::cout << "replay: trace hash matches (" << recorded << ")\n";
                return 0;
            }
            std::cout << "replay: MISMATCH recorded=" << recorded << " replayed=" << replayed << "\n";
            return 2;
        }
        ++idx;
    }
    throw InvalidInput("replay: no row matched");
}

int cmd_metrics(const std::string& truth_path, const std::string& estimate_path, double reg,
                double radius) {
    MixtureModel truth = MixtureModel::load_json_file(truth_path);
    MixtureModel est = MixtureModel::load_json_file(estimate_path);
    DiscreteMixture a{truth.d, truth.means, truth.weights};
    DiscreteMixture b{est.d, est.means, est.weights};
    Matrix tc(truth.K, truth.d), ec(est.K, est.d);
    tc.data = truth.means;
    ec.data = est.means;
    std::cout << "w2_squared_exact," << format_double(w2_squared_exact(b, a)) << "\n";
    std::cout << "w2_squared_entropic," << format_double(w2_squared_entropic(b, a, reg, 1000)) << "\n";
    std::cout << "accuracy," << format_double(accuracy(ec, tc, radius)) << "\n";
    std::cout << "mse," << format_double(mse(ec, tc)) << "\n";
    std::cout << "xu_eq11," << format_double(xu_weighted_permutation_error(ec, tc, truth.weights)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-model estimation with Sinkhorn, vanilla and overparameterized EM"};
    app.require_subcommand(1);

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "Fit a mixture model to data with one EM engine");
    std::string model_path, data_path, engine = "vem", out_dir = "fit_out";
    int iterations = 2000, sinkhorn_iterations = 200;
    bool cov_update = false, verbose = false;
    double budget = 0.0;
    fit_cmd->add_option("--model", model_path, "Model JSON file")->required();
    fit_cmd->add_option("--data", data_path, "Dataset CSV file")->required();
    fit_cmd->add_option("--engine", engine, "Engine: vem, oem or sem");
    fit_cmd->add_option("--out", out_dir, "Output directory");
    fit_cmd->add_option("--iterations", iterations, "Maximum EM iterations");
    fit_cmd->add_option("--sinkhorn-iterations", sinkhorn_iterations, "Inner Sinkhorn sweeps");
    fit_cmd->add_flag("--covariance-update", cov_update, "Update covariances in the M step");
    fit_cmd->add_option("--budget-seconds", budget, "E/M wall-time budget");
    fit_cmd->add_flag("--verbose", verbose, "Progress output on stderr");

    // theory-check
    auto* theory_cmd = app.add_subcommand("theory-check", "Run the population property battery");
    double theta_star = 1.0, alpha_star = 0.7, grid_step = 0.05, tolerance = 0.0;
    int nodes = 1601;
    std::string report_path;
    theory_cmd->add_option("--theta-star", theta_star, "True positive mean");
    theory_cmd->add_option("--alpha-star", alpha_star, "Known weight of the positive component");
    theory_cmd->add_option("--nodes", nodes, "Quadrature nodes per component");
    theory_cmd->add_option("--grid-step", grid_step, "Theta grid step for the sweeps");
    theory_cmd->add_option("--tolerance", tolerance, "Coincidence tolerance override");
    theory_cmd->add_option("--report", report_path, "Also write the report to this file");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Run a full experiment scenario");
    std::string scenario, config_path, exp_out, exp_engine, error_mode;
    std::uint64_t seed = 0;
    int jobs = 0, exp_iterations = 0;
    double exp_budget = 0.0;
    bool exp_verbose = false;
    exp_cmd->add_option("--scenario", scenario,
                        "asymmetric_two | equal_two | general_two | three_mixture | xu_comparison | segmentation");
    exp_cmd->add_option("--config", config_path, "Config JSON (overrides scenario defaults)");
    exp_cmd->add_option("--out", exp_out, "Output directory");
    auto* seed_opt = exp_cmd->add_option("--seed", seed, "Root seed override");
    exp_cmd->add_option("--engine", exp_engine, "Restrict to one engine (vem, oem, sem)");
    exp_cmd->add_option("--jobs", jobs, "Worker threads for grid cells");
    exp_cmd->add_option("--budget-seconds", exp_budget, "Segmentation E/M budget override");
    exp_cmd->add_option("--iterations", exp_iterations, "EM iteration override");
    exp_cmd->add_option("--error-mode", error_mode, "wasserstein or xu_eq11");
    exp_cmd->add_flag("--verbose", exp_verbose, "Progress output on stderr");

    // replay
    auto* replay_cmd = app.add_subcommand("replay", "Re-execute one emitted run and verify its trace hash");
    std::string replay_dir, key_spec;
    int row_index = 0;
    replay_cmd->add_option("--dir", replay_dir, "Experiment output directory")->required();
    replay_cmd->add_option("--row", row_index, "Row index into runs.csv (0-based)");
    replay_cmd->add_option("--key", key_spec, "Comma-separated column=value selectors");
    bool replay_verbose = false;
    replay_cmd->add_flag("--verbose", replay_verbose, "Progress output on stderr");

    // metrics
    auto* metrics_cmd = app.add_subcommand("metrics", "Estimation-error metrics between two models");
    std::string truth_path, estimate_path;
    double reg = 0.1, radius = 3.0;
    metrics_cmd->add_option("--truth", truth_path, "True model JSON")->required();
    metrics_cmd->add_option("--estimate", estimate_path, "Fitted model JSON")->required();
    metrics_cmd->add_option("--reg", reg, "Entropic regularization");
    metrics_cmd->add_option("--radius", radius, "Accuracy radius (first three coordinates)");

    try {
        app.parse(argc, argv);
        if (fit_cmd->parsed())
            return cmd_fit(model_path, data_path, engine, out_dir, iterations, sinkhorn_iterations,
                           cov_update, budget, verbose);
        if (theory_cmd->parsed())
            return cmd_theory_check(theta_star, alpha_star, nodes, grid_step, tolerance, report_path);
        if (exp_cmd->parsed())
            return cmd_experiment(scenario, config_path, exp_out, seed, seed_opt->count() > 0, exp_engine,
                                  jobs, exp_budget, exp_iterations, error_mode, exp_verbose);
        if (replay_cmd->parsed()) return cmd_replay(replay_dir, row_index, key_spec, replay_verbose);
        if (metrics_cmd->parsed()) return cmd_metrics(truth_path, estimate_path, reg, radius);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
