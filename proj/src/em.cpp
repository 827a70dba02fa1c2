#include "sinkem/em.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "sinkem/kernels.hpp"

namespace sinkem {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDegenerateResponsibility = 1e-12;
constexpr double kWeightClamp = 1e-10;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StepStats {
    int weight_clamps = 0;
    int floor_events = 0;
};

MixtureModel em_step_impl(const MixtureModel& model, const Dataset& data, const EngineConfig& config,
                          std::vector<double>* warm_potentials, StepStats* stats) {
    const int K = model.K, d = model.d, n = data.n();
    auto cm = factorize(model);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), n, logk);

    Matrix R;  // column-stochastic responsibilities
    if (config.engine == Engine::sinkhorn) {
        Coupling c = sinkhorn_estep(logk, model.weights, config.sinkhorn,
                                    config.sinkhorn.warm_start ? warm_potentials : nullptr);
        if (warm_potentials) *warm_potentials = c.row_potentials;
        R = std::move(c.plan);
        for (double& v : R.data) v *= n;  // plan columns sum to 1/n
    } else {
        int bad = kernels::posterior_from_log_kernel(logk, R);
        if (bad >= 0)
            throw NumericalError("all component densities underflow at point " + std::to_string(bad));
    }

    std::vector<double> Nk(K), Sk(static_cast<std::size_t>(K) * d);
    kernels::weighted_moments(R, data.points.data(), d, Nk.data(), Sk.data());

    MixtureModel next = model;
    const bool has_prior = config.mean_prior.has_value();
    std::vector<char> degenerate(K, 0);
    for (int k = 0; k < K; ++k) {
        if (Nk[k] >= kDegenerateResponsibility) continue;
        if (config.engine == Engine::overparameterized || has_prior) {
            degenerate[k] = 1;
        } else {
            throw DegenerateCluster(k, "component " + std::to_string(k) +
                                           " lost all responsibility mass (" + format_double(Nk[k]) + ")");
        }
    }

    if (has_prior) {
        const auto& prior = *config.mean_prior;
        Responsibilities resp{std::move(R)};
        next.means = map_m_step_means(resp, data, model.covariances, prior.means, prior.covariances,
                                      prior.flat);
        R = std::move(resp.m);
    } else {
        for (int k = 0; k < K; ++k) {
            if (degenerate[k]) continue;  // oEM: keep the collapsed component's mean
            for (int j = 0; j < d; ++j)
                next.means[static_cast<std::size_t>(k) * d + j] = Sk[static_cast<std::size_t>(k) * d + j] / Nk[k];
        }
    }

    if (config.update_covariances) {
        std::vector<double> scatter(static_cast<std::size_t>(K) * d * d);
        kernels::weighted_scatter(R, data.points.data(), d, next.means.data(), scatter.data());
        if (config.covariance_isotropic) {
            for (int k = 0; k < K; ++k) {
                if (degenerate[k]) continue;
                double tr = 0.0;
                for (int j = 0; j < d; ++j) tr += scatter[static_cast<std::size_t>(k) * d * d + j * d + j];
                double s2 = tr / (d * Nk[k]);
                if (s2 < config.covariance_floor) {
                    s2 = config.covariance_floor;
                    if (stats) ++stats->floor_events;
                }
                auto C = next.covariance(k);
                std::fill(C.begin(), C.end(), 0.0);
                for (int j = 0; j < d; ++j) C[j * d + j] = s2;
            }
            next.covariance_floor = config.covariance_floor;
        } else {
            for (int k = 0; k < K; ++k) {
                if (degenerate[k]) continue;
                for (int t = 0; t < d * d; ++t)
                    next.covariances[static_cast<std::size_t>(k) * d * d + t] =
                        scatter[static_cast<std::size_t>(k) * d * d + t] / Nk[k];
            }
            next.covariance_floor = config.covariance_floor;
            int floored = next.floor_covariances();
            if (stats) stats->floor_events += floored;
        }
    }

    if (config.update_weights()) {
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
            double w = Nk[k] / static_cast<double>(n);
            if (w < kWeightClamp) {
                w = kWeightClamp;
                if (stats) ++stats->weight_clamps;
            }
            next.weights[k] = w;
            total += w;
        }
        for (int k = 0; k < K; ++k) next.weights[k] /= total;
    }
    return next;
}

}  // namespace

std::string engine_name(Engine e) {
    switch (e) {
        case Engine::vanilla: return "vem";
        case Engine::overparameterized: return "oem";
        case Engine::sinkhorn: return "sem";
    }
    return "?";
}

Engine engine_from_name(const std::string& name) {
    if (name == "vem" || name == "vanilla") return Engine::vanilla;
    if (name == "oem" || name == "overparameterized") return Engine::overparameterized;
    if (name == "sem" || name == "sinkhorn") return Engine::sinkhorn;
    throw InvalidInput("engine: unknown name '" + name + "' (expected vem, oem or sem)");
}

void EngineConfig::validate() const {
    sinkhorn.validate();
    if (max_iterations < 1) throw InvalidInput("max_iterations: must be >= 1");
    if (time_budget_seconds && !(*time_budget_seconds > 0.0))
        throw InvalidInput("time_budget_seconds: must be positive");
    if (!(covariance_floor > 0.0)) throw InvalidInput("covariance_floor: must be positive");
}

std::string EngineConfig::to_json() const {
    nlohmann::json j;
    j["engine"] = engine_name(engine);
    j["update_weights"] = update_weights();
    j["update_covariances"] = update_covariances;
    j["covariance_isotropic"] = covariance_isotropic;
    j["covariance_floor"] = covariance_floor;
    j["sinkhorn"] = {{"max_iterations", sinkhorn.max_iterations},
                     {"marginal_tolerance", sinkhorn.marginal_tolerance},
                     {"warm_start", sinkhorn.warm_start}};
    j["max_iterations"] = max_iterations;
    if (time_budget_seconds) j["time_budget_seconds"] = *time_budget_seconds;
    j["mean_prior"] = mean_prior.has_value() ? (mean_prior->flat ? "flat" : "gaussian") : "none";
    return j.dump();
}

std::string FitTrace::to_csv() const {
    std::string out = "iter,nll,entropic_loss,time_ms";
    if (iterations.empty()) return out + "\n";
    const std::size_t K = iterations[0].weights.size();
    const std::size_t d = iterations[0].means.size() / K;
    for (std::size_t k = 0; k < K; ++k) out += ",weight_" + std::to_string(k);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < d; ++j) out += ",mean_" + std::to_string(k) + "_" + std::to_string(j);
    const bool with_cov = !iterations[0].covariances.empty();
    if (with_cov)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t t = 0; t < d * d; ++t)
                out += ",cov_" + std::to_string(k) + "_" + std::to_string(t);
    out += '\n';
    for (std::size_t it = 0; it < iterations.size(); ++it) {
        const auto& rec = iterations[it];
        out += std::to_string(it + 1);
        out += ',' + format_double(rec.nll);
        out += ',' + format_double(rec.entropic_loss);
        out += ',' + format_double(rec.time_ms);
        for (double w : rec.weights) out += ',' + format_double(w);
        for (double m : rec.means) out += ',' + format_double(m);
        if (with_cov)
            for (double c : rec.covariances) out += ',' + format_double(c);
        out += '\n';
    }
    return out;
}

std::string FitTrace::header_json(const EngineConfig& config, std::uint64_t seed) const {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(config.to_json());
    j["seed"] = seed;
    j["termination_reason"] = termination_reason;
    j["iterations"] = iterations.size();
    j["weight_clamps"] = weight_clamps;
    j["covariance_floor_events"] = covariance_floor_events;
    return j.dump(2);
}

// Hashes the numeric trace content only, so a wall-clock-budgeted run and its
// iteration-count replay agree.
std::uint64_t FitTrace::hash() const {
    std::uint64_t h = fnv1a64("trace");
    for (const auto& rec : iterations) {
        h = fnv1a64(rec.weights.data(), rec.weights.size() * sizeof(double), h);
        h = fnv1a64(rec.means.data(), rec.means.size() * sizeof(double), h);
        h = fnv1a64(rec.covariances.data(), rec.covariances.size() * sizeof(double), h);
    }
    h = fnv1a64(final_model.weights.data(), final_model.weights.size() * sizeof(double), h);
    h = fnv1a64(final_model.means.data(), final_model.means.size() * sizeof(double), h);
    h = fnv1a64(final_model.covariances.data(), final_model.covariances.size() * sizeof(double), h);
    return h;
}

MixtureModel em_step(const MixtureModel& model, const Dataset& data, const EngineConfig& config) {
    config.validate();
    if (data.d != model.d) throw InvalidInput("dataset: dimension mismatch with model");
    return em_step_impl(model, data, config, nullptr, nullptr);
}

FitTrace fit(const MixtureModel& model0, const Dataset& data, const EngineConfig& config) {
    config.validate();
    model0.validate();
    data.validate();
    if (data.d != model0.d) throw InvalidInput("dataset: dimension mismatch with model");

    FitTrace trace;
    MixtureModel model = model0;
    std::vector<double> warm(model.K, 0.0);
    StepStats stats;
    double em_seconds = 0.0;
    trace.termination_reason = "max_iterations";

    // The recorded entropic loss is the converged semi-dual value, so the
    // metric solve runs deeper than the E-step protocol and keeps its own
    // warm-start chain.
    SinkhornSettings loss_settings = config.sinkhorn;
    loss_settings.max_iterations = std::max(2000, 2 * config.sinkhorn.max_iterations);
    loss_settings.marginal_tolerance = 1e-10;
    loss_settings.warm_start = true;
    std::vector<double> loss_warm(model.K, 0.0);

    for (int t = 0; t < config.max_iterations; ++t) {
        MixtureModel next;
        auto t0 = std::chrono::steady_clock::now();
        try {
            next = em_step_impl(model, data, config, &warm, &stats);
        } catch (const DegenerateCluster& e) {
            trace.termination_reason = "degenerate_cluster:" + std::to_string(e.component);
            break;
        }
        em_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        model = std::move(next);

        IterationRecord rec;
        rec.weights = model.weights;
        rec.means = model.means;
        if (config.update_covariances) rec.covariances = model.covariances;
        rec.time_ms = em_seconds * 1000.0;
        rec.nll = config.record_losses ? negative_log_likelihood(model, data) : kNaN;
        rec.entropic_loss =
            (config.record_losses && config.record_entropic_loss && config.engine == Engine::sinkhorn)
                ? empirical_entropic_loss(model, data, loss_settings, &loss_warm)
                : kNaN;
        trace.iterations.push_back(std::move(rec));

        if (config.time_budget_seconds && em_seconds >= *config.time_budget_seconds) {
            trace.termination_reason = "time_budget";
            break;
        }
    }
    trace.final_model = std::move(model);
    trace.weight_clamps = stats.weight_clamps;
    trace.covariance_floor_events = stats.floor_events;
    return trace;
}

std::vector<double> map_m_step_means(const Responsibilities& responsibilities, const Dataset& data,
                                     std::span<const double> covariances,
                                     std::span<const double> prior_means,
                                     std::span<const double> prior_covariances, bool flat_prior) {
    const int K = static_cast<int>(responsibilities.m.rows);
    const int d = data.d;
    if (static_cast<int>(responsibilities.m.cols) != data.n())
        throw InvalidInput("map m-step: responsibilities and data sizes disagree");
    if (static_cast<int>(covariances.size()) != K * d * d)
        throw InvalidInput("map m-step: covariances size != K*d*d");
    if (static_cast<int>(prior_means.size()) != K * d)
        throw InvalidInput("map m-step: prior means size != K*d");
    if (!flat_prior && static_cast<int>(prior_covariances.size()) != K * d * d)
        throw InvalidInput("map m-step: prior covariances size != K*d*d");

    std::vector<double> Nk(K), Sk(static_cast<std::size_t>(K) * d);
    kernels::weighted_moments(responsibilities.m, data.points.data(), d, Nk.data(), Sk.data());

    std::vector<double> out(static_cast<std::size_t>(K) * d);
    for (int k = 0; k < K; ++k) {
        Eigen::Map<const EMat> cov(covariances.data() + static_cast<std::size_t>(k) * d * d, d, d);
        Eigen::LLT<EMat> cov_llt(cov);
        if (cov_llt.info() != Eigen::Success)
            throw NumericalError("map m-step: covariance of component " + std::to_string(k) +
                                 " is not positive definite");
        EMat cov_prec = cov_llt.solve(EMat::Identity(d, d));

        EMat prior_prec = EMat::Zero(d, d);
        if (!flat_prior) {
            Eigen::Map<const EMat> pc(prior_covariances.data() + static_cast<std::size_t>(k) * d * d, d, d);
            Eigen::LLT<EMat> pc_llt(pc);
            if (pc_llt.info() != Eigen::Success)
                throw NumericalError("map m-step: prior covariance of component " + std::to_string(k) +
                                     " is not positive definite");
            prior_prec = pc_llt.solve(EMat::Identity(d, d));
        }

        Eigen::Map<const Eigen::VectorXd> mu_a(prior_means.data() + static_cast<std::size_t>(k) * d, d);
        Eigen::Map<const Eigen::VectorXd> s_k(Sk.data() + static_cast<std::size_t>(k) * d, d);
        EMat A = prior_prec + Nk[k] * cov_prec;
        Eigen::VectorXd rhs = prior_prec * mu_a + cov_prec * s_k;
        Eigen::LLT<EMat> A_llt(A);
        if (A_llt.info() != Eigen::Success)
            throw NumericalError("map m-step: singular combined precision for component " +
                                 std::to_string(k));
        Eigen::VectorXd mu = A_llt.solve(rhs);
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(k) * d + j] = mu[j];
    }
    return out;
}

}  // namespace sinkem
