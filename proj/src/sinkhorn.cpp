#include "sinkem/sinkhorn.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "sinkem/kernels.hpp"

namespace sinkem {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_simplex(std::span<const double> w) {
    double s = 0.0;
    for (double x : w) {
        if (!(x >= 0.0)) throw InvalidInput("weights: entries must be nonnegative");
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("weights: must sum to 1");
}
}  // namespace

std::string Coupling::plan_to_csv() const {
    std::string out;
    for (std::size_t k = 0; k < plan.rows; ++k) {
        for (std::size_t i = 0; i < plan.cols; ++i) {
            if (i) out += ',';
            out += format_double(plan(k, i));
        }
        out += '\n';
    }
    return out;
}

std::string Coupling::diagnostics_to_json() const {
    nlohmann::json j;
    j["row_potentials"] = row_potentials;
    j["col_potentials"] = col_potentials;
    j["iterations_run"] = iterations_run;
    j["marginal_error"] = marginal_error;
    return j.dump(2);
}

Coupling sinkhorn_estep(const Matrix& log_kernel, std::span<const double> weights,
                        const SinkhornSettings& settings,
                        const std::vector<double>* warm_row_potentials) {
    settings.validate();
    const std::size_t K = log_kernel.rows, n = log_kernel.cols;
    if (K == 0 || n == 0) throw InvalidInput("sinkhorn: empty kernel");
    if (weights.size() != K) throw InvalidInput("sinkhorn: weights size != kernel rows");
    check_simplex(weights);
    for (double v : log_kernel.data)
        if (!std::isfinite(v)) throw InvalidInput("sinkhorn: log kernel entries must be finite");

    std::vector<double> log_w(K);
    for (std::size_t k = 0; k < K; ++k) log_w[k] = std::log(weights[k]);

    Coupling c;
    c.row_potentials.assign(K, 0.0);
    if (settings.warm_start && warm_row_potentials && warm_row_potentials->size() == K)
        c.row_potentials = *warm_row_potentials;
    c.col_potentials.assign(n, 0.0);

    c.iterations_run = kernels::sinkhorn_sweeps(log_kernel, log_w.data(), settings.max_iterations,
                                                settings.marginal_tolerance, c.row_potentials.data(),
                                                c.col_potentials.data());
    c.marginal_error = kernels::marginal_error(log_kernel, c.row_potentials.data(),
                                               c.col_potentials.data(), weights.data());
    kernels::plan_from_potentials(log_kernel, c.row_potentials.data(), c.col_potentials.data(), c.plan);
    return c;
}

std::vector<double> tilted_weights(const Coupling& coupling, std::span<const double> weights) {
    const std::size_t K = weights.size();
    std::vector<double> logits(K);
    for (std::size_t k = 0; k < K; ++k)
        logits[k] = coupling.row_potentials[k] + (weights[k] > 0.0 ? std::log(weights[k]) : kNegInf);
    double lse = kernels::logsumexp(logits.data(), K);
    std::vector<double> alpha(K);
    for (std::size_t k = 0; k < K; ++k) alpha[k] = std::exp(logits[k] - lse);
    return alpha;
}

double empirical_entropic_loss(const MixtureModel& model, const Dataset& data,
                               const SinkhornSettings& settings,
                               std::vector<double>* warm_row_potentials) {
    if (data.d != model.d) throw InvalidInput("dataset: dimension mismatch with model");
    if (data.n() < 1) throw InvalidInput("dataset: empty");
    auto cm = factorize(model);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), data.n(), logk);
    Coupling c = sinkhorn_estep(logk, model.weights, settings, warm_row_potentials);
    if (warm_row_potentials) *warm_row_potentials = c.row_potentials;
    // With h_i = -logsumexp_k(f_k + logk(k,i)), the semi-dual objective is
    // sum_k f_k w_k + mean(h).
    double dual = 0.0;
    for (int k = 0; k < model.K; ++k) dual += c.row_potentials[k] * model.weights[k];
    return dual + kernels::mean_fixed_order(c.col_potentials.data(), c.col_potentials.size());
}

double entropic_transport_cost(const Matrix& cost, std::span<const double> a, std::span<const double> b,
                               double reg, int iterations) {
    const std::size_t m = cost.rows, n = cost.cols;
    if (a.size() != m || b.size() != n) throw InvalidInput("entropic transport: marginal sizes mismatch");
    if (!(reg > 0.0)) throw InvalidInput("entropic transport: reg must be positive");
    std::vector<double> la(m), lb(n);
    for (std::size_t i = 0; i < m; ++i) la[i] = a[i] > 0.0 ? std::log(a[i]) : kNegInf;
    for (std::size_t j = 0; j < n; ++j) lb[j] = b[j] > 0.0 ? std::log(b[j]) : kNegInf;
    std::vector<double> u(m, 0.0), v(n, 0.0), tmp(std::max(m, n));
    for (int t = 0; t < iterations; ++t) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) tmp[j] = lb[j] + v[j] - cost(i, j) / reg;
            u[i] = -kernels::logsumexp(tmp.data(), n);
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) tmp[i] = la[i] + u[i] - cost(i, j) / reg;
            v[j] = -kernels::logsumexp(tmp.data(), m);
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (la[i] == kNegInf) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (lb[j] == kNegInf) continue;
            double lp = la[i] + lb[j] + u[i] + v[j] - cost(i, j) / reg;
            total += cost(i, j) * std::exp(lp);
        }
    }
    return total;
}

}  // namespace sinkem
