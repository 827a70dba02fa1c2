#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sinkem/mixture.hpp"
#include "sinkem/sinkhorn.hpp"

namespace sinkem {

enum class Engine { vanilla, overparameterized, sinkhorn };

std::string engine_name(Engine e);
Engine engine_from_name(const std::string& name);  // accepts vem/oem/sem and long names

// Gaussian-conjugate prior on component means, used by the MAP M-step. With
// `flat` set the prior precision is zero and the update reduces to the plain
// weighted mean.
struct MeanPrior {
    std::vector<double> means;        // K*d
    std::vector<double> covariances;  // K*d*d
    bool flat = false;
};

struct EngineConfig {
    Engine engine = Engine::vanilla;
    bool update_covariances = false;
    bool covariance_isotropic = false;  // constrain updates to sigma^2 I
    double covariance_floor = 1e-8;
    SinkhornSettings sinkhorn;
    std::optional<MeanPrior> mean_prior;
    int max_iterations = 2000;
    std::optional<double> time_budget_seconds;
    bool record_losses = true;          // per-iteration nll column
    bool record_entropic_loss = true;   // per-iteration entropic loss (sinkhorn engine only)

    // The weight update is what defines overparameterized EM.
    bool update_weights() const { return engine == Engine::overparameterized; }
    void validate() const;
    std::string to_json() const;
};

struct IterationRecord {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> covariances;  // empty unless covariances are updated
    double nll = 0.0;
    double entropic_loss = 0.0;  // NaN unless engine == sinkhorn
    double time_ms = 0.0;        // cumulative E/M wall time
};

struct FitTrace {
    std::vector<IterationRecord> iterations;
    MixtureModel final_model;
    std::string termination_reason;  // max_iterations | time_budget | degenerate_cluster:<k>
    int weight_clamps = 0;           // oEM vanishing-weight clamps
    int covariance_floor_events = 0;

    std::string to_csv() const;
    std::string header_json(const EngineConfig& config, std::uint64_t seed) const;
    std::uint64_t hash() const;
};

// One E/M iteration. Throws DegenerateCluster when a component's total
// responsibility falls below 1e-12 (vanilla and sinkhorn engines without a
// mean prior); the overparameterized engine instead clamps the vanishing
// weight at 1e-10 and keeps that component's parameters.
MixtureModel em_step(const MixtureModel& model, const Dataset& data, const EngineConfig& config);

FitTrace fit(const MixtureModel& model0, const Dataset& data, const EngineConfig& config);

// MAP mean update: for each component, (Sa^-1 + N_k S^-1)^-1 (Sa^-1 mu_a + S^-1 s_k)
// with N_k the total responsibility and s_k the responsibility-weighted sum.
// flat_prior drops the prior precision entirely.
std::vector<double> map_m_step_means(const Responsibilities& responsibilities, const Dataset& data,
                                     std::span<const double> covariances,
                                     std::span<const double> prior_means,
                                     std::span<const double> prior_covariances,
                                     bool flat_prior = false);

}  // namespace sinkem
