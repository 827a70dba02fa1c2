#pragma once

#include <span>
#include <vector>

#include "sinkem/common.hpp"
#include "sinkem/mixture.hpp"

namespace sinkem {

struct SinkhornSettings {
    int max_iterations = 200;         // full (row, column) sweeps
    double marginal_tolerance = 0.0;  // 0 => always run all iterations
    bool warm_start = false;          // reuse row potentials across EM iterations

    void validate() const {
        if (max_iterations < 1) throw InvalidInput("sinkhorn: max_iterations must be >= 1");
        if (marginal_tolerance < 0.0) throw InvalidInput("sinkhorn: marginal_tolerance must be >= 0");
    }
};

// Entropic coupling between component weights (row marginals) and the uniform
// empirical measure (column marginals, 1/n each), with its dual potentials.
struct Coupling {
    Matrix plan;  // K x n, total mass 1
    std::vector<double> row_potentials;
    std::vector<double> col_potentials;
    int iterations_run = 0;
    double marginal_error = 0.0;

    std::string plan_to_csv() const;
    std::string diagnostics_to_json() const;
};

// log_kernel(k,i) = log( weights_k * q_k(y_i) ) with q_k the component
// density; entries must be finite. Starts from zero potentials (or the given
// warm-start row potentials) and alternates row/column normalizations in the
// log domain.
Coupling sinkhorn_estep(const Matrix& log_kernel, std::span<const double> weights,
                        const SinkhornSettings& settings,
                        const std::vector<double>* warm_row_potentials = nullptr);

// Tilted mixing weights alpha_k = e^{f_k} w_k / sum_j e^{f_j} w_j recovered
// from the row potentials. The converged plan equals, column by column, the
// vanilla posterior computed under these weights.
std::vector<double> tilted_weights(const Coupling& coupling, std::span<const double> weights);

// Converged semi-dual objective:
//   sum_k f_k w_k - (1/n) sum_i log sum_k w_k exp(f_k + log q_k(y_i))
// warm_row_potentials, when given with settings.warm_start, seeds the solve
// and receives the converged potentials back.
double empirical_entropic_loss(const MixtureModel& model, const Dataset& data,
                               const SinkhornSettings& settings,
                               std::vector<double>* warm_row_potentials = nullptr);

// Generic-cost entropic transport (used by the metrics module and tests, not
// by the E-step): minimizes <C, pi> + reg * H(pi | a x b) over couplings of
// the discrete marginals a and b. Returns the transport term <C, pi> only.
double entropic_transport_cost(const Matrix& cost, std::span<const double> a, std::span<const double> b,
                               double reg, int iterations);

}  // namespace sinkem
