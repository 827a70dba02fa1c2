#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sinkem/common.hpp"
#include "sinkem/kernels.hpp"

namespace sinkem {

// Gaussian mixture: K components in dimension d. Means and covariances are
// stored flat (row-major) so the kernels can work on raw buffers.
struct MixtureModel {
    int K = 0;
    int d = 0;
    std::vector<double> weights;      // K, sums to 1
    std::vector<double> means;        // K*d
    std::vector<double> covariances;  // K*d*d, each SPD
    double covariance_floor = 1e-8;

    std::span<const double> mean(int k) const { return {means.data() + static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d)}; }
    std::span<double> mean(int k) { return {means.data() + static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d)}; }
    std::span<const double> covariance(int k) const { return {covariances.data() + static_cast<std::size_t>(k) * d * d, static_cast<std::size_t>(d) * d}; }
    std::span<double> covariance(int k) { return {covariances.data() + static_cast<std::size_t>(k) * d * d, static_cast<std::size_t>(d) * d}; }

    // Throws InvalidInput naming the offending field.
    void validate() const;

    // Lifts covariance eigenvalues to the floor. Returns how many components
    // were adjusted.
    int floor_covariances();

    static MixtureModel isotropic(std::vector<double> weights, std::vector<std::vector<double>> means,
                                  double variance = 1.0);

    std::string to_json() const;
    static MixtureModel from_json(const std::string& text);
    static MixtureModel load_json_file(const std::string& path);
    void save_json_file(const std::string& path) const;
};

struct Dataset {
    int d = 0;
    std::vector<double> points;  // n*d
    std::uint64_t seed = 0;      // generator seed; 0 for external data

    int n() const { return d == 0 ? 0 : static_cast<int>(points.size()) / d; }
    std::span<const double> point(int i) const { return {points.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)}; }
    void validate() const;

    std::string to_csv() const;
    static Dataset from_csv(const std::string& text);
    static Dataset load_csv_file(const std::string& path);
    void save_csv_file(const std::string& path) const;
};

// K x n column-stochastic assignment probabilities.
struct Responsibilities {
    Matrix m;
};

// Cholesky-factorized view of the model consumed by the kernels. Throws
// NumericalError if a covariance is not positive definite.
kernels::ComponentModel factorize(const MixtureModel& model);

double log_density(const MixtureModel& model, std::span<const double> y);
double negative_log_likelihood(const MixtureModel& model, const Dataset& data);

Dataset sample(const MixtureModel& model, int n, std::uint64_t seed);
// As sample(), additionally reporting the component index of each draw.
Dataset sample_labeled(const MixtureModel& model, int n, std::uint64_t seed, std::vector<int>& labels);

Responsibilities vanilla_posterior(const MixtureModel& model, const Dataset& data);

}  // namespace sinkem
