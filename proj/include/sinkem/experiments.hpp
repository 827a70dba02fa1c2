#pragma once

#include <map>
#include <string>
#include <vector>

#include "sinkem/em.hpp"
#include "sinkem/metrics.hpp"
#include "sinkem/mixture.hpp"

namespace sinkem {

// Prior over component centers (3 spatial coordinates in micrometers plus 3
// color channels) for the synthetic segmentation benchmark.
struct AtlasPrior {
    int K = 0;
    int d = 6;
    std::vector<double> prior_means;        // K*6
    std::vector<double> prior_covariances;  // K*36

    // Five synthetic components: spatial prior means at least 8 um apart with
    // 1.5 um prior std, color prior means spread over RGB with 0.1 prior std.
    static AtlasPrior synthetic_default();
    void validate() const;
};

struct ExperimentConfig {
    std::string scenario;  // asymmetric_two | equal_two | general_two | three_mixture | xu_comparison | segmentation
    std::vector<std::string> engines = {"vem", "oem", "sem"};
    std::uint64_t root_seed = 987654321;
    int n_samples = 1000;
    int n_datasets = 10;
    int iterations = 2000;
    int sinkhorn_iterations = 200;
    double sinkhorn_tolerance = 0.0;   // >0 enables the solver's early stop
    bool sinkhorn_warm_start = false;  // reuse potentials across EM iterations
    std::string error_mode = "wasserstein";  // or xu_eq11
    std::string output_dir = "out";
    int jobs = 0;  // 0 = all cores; budgeted scenarios run sequentially regardless

    double theta_star = 1.0;
    std::vector<double> alpha_grid;   // asymmetric_two, general_two
    std::vector<double> init_grid;    // asymmetric_two theta0 values
    int init_grid_2d = 26;            // equal_two / general_two: per-axis grid size on [-2,2]
    std::vector<double> mu_grid;      // three_mixture separations
    std::vector<double> noise_grid;   // three_mixture init corruption variances
    std::vector<int> n_grid;          // three_mixture sample sizes
    int oem_random_weight_inits = 4;  // three_mixture extra oEM weight draws
    std::vector<double> rho_grid;     // xu_comparison separation scales
    std::vector<double> sigma2_grid;  // general_two true variances
    std::vector<double> theta2_grid;  // general_two second true mean

    double time_budget_seconds = 1.0;  // segmentation E/M budget
    int runs = 20;                     // segmentation randomized runs
    int n_pixels = 5000;
    std::vector<std::string> segmentation_configs;  // subset of the 6; empty = all
    AtlasPrior atlas = AtlasPrior::synthetic_default();

    static ExperimentConfig defaults_for(const std::string& scenario);
    // Starts from defaults_for(json["scenario"]) and overrides any field
    // present in the document.
    static ExperimentConfig from_json(const std::string& text);
    std::string to_json() const;
    void validate() const;
};

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row) { rows.push_back(std::move(row)); }
    void sort_rows();
    std::string to_csv() const;
    int column_index(const std::string& name) const;
};

struct ExperimentOutput {
    ResultTable runs;     // one row per (cell, engine)
    ResultTable summary;  // aggregated over datasets/runs
    std::string metadata_json;
    std::vector<std::pair<std::string, std::string>> extra_files;  // filename -> content

    // Writes runs.csv, summary.csv, metadata.json and extras into dir.
    void write(const std::string& dir) const;
};

ExperimentOutput run_experiment(const ExperimentConfig& config);

ExperimentOutput run_asymmetric_two(const ExperimentConfig& config);
ExperimentOutput run_equal_two(const ExperimentConfig& config);
ExperimentOutput run_general_two(const ExperimentConfig& config);
ExperimentOutput run_three_mixture(const ExperimentConfig& config);
ExperimentOutput run_xu_comparison(const ExperimentConfig& config);
ExperimentOutput run_segmentation(const ExperimentConfig& config);

// Synthetic scene for the segmentation benchmark: component centers drawn
// from the atlas prior, isotropic covariances sigma_k^2 I6 with
// sigma_k ~ LogNormal(1, 0.1), uniform component assignment.
Dataset generate_segmentation_data(const AtlasPrior& atlas, int n_pixels, std::uint64_t seed,
                                   MixtureModel& truth, std::vector<int>& labels);

// Re-executes the single run identified by `key` (column -> value, from a row
// of runs.csv) under the same config and returns its trace hash.
std::uint64_t replay_trace_hash(const ExperimentConfig& config,
                                const std::map<std::string, std::string>& key);

}  // namespace sinkem
