#include "sinkem/population.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <mutex>
#include <unordered_map>

namespace sinkem {

namespace {

// Nodes are the eigenvalues of the Jacobi matrix (Golub-Welsch); weights are
// Christoffel numbers 1 / sum_k p_k(x)^2 over the orthonormal Hermite
// polynomials, which avoids computing eigenvectors.
GaussHermite build_gauss_hermite(int n) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1);
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);

    GaussHermite gh;
    gh.nodes.resize(n);
    gh.weights.resize(n);
    const double p0 = std::pow(3.14159265358979323846, -0.25);
    for (int j = 0; j < n; ++j) {
        const double x = es.eigenvalues()[j];
        // The unweighted polynomial values grow like e^{x^2/2} near the
        // extreme nodes; rescale on the fly and track the log of the scale.
        double pm = 0.0, pk = p0, total = pk * pk, log_scale = 0.0;
        for (int k = 0; k < n - 1; ++k) {
            double pn = x * std::sqrt(2.0 / (k + 1)) * pk - std::sqrt(static_cast<double>(k) / (k + 1)) * pm;
            pm = pk;
            pk = pn;
            total += pk * pk;
            if (std::abs(pk) > 1e120) {
                pm *= 1e-120;
                pk *= 1e-120;
                total *= 1e-240;
                log_scale += 120.0 * 2.302585092994046;
            }
        }
        gh.nodes[j] = x;
        gh.weights[j] = std::exp(-(std::log(total) + 2.0 * log_scale));
    }
    return gh;
}

double half_log_odds(double alpha) { return 0.5 * (std::log(alpha) - std::log1p(-alpha)); }

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log q^theta(y) for the two-component model with weight alpha on +theta.
double log_mixture_density(double y, double theta, double alpha) {
    const double half_log_2pi = 0.91893853320467274178;
    double l1 = std::log(alpha) - 0.5 * (y - theta) * (y - theta);
    double l2 = std::log1p(-alpha) - 0.5 * (y + theta) * (y + theta);
    double m = std::max(l1, l2);
    return m + std::log(std::exp(l1 - m) + std::exp(l2 - m)) - half_log_2pi;
}

}  // namespace

const GaussHermite& GaussHermite::get(int n) {
    static std::mutex mu;
    static std::unordered_map<int, GaussHermite> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, build_gauss_hermite(n)).first;
    return it->second;
}

double population_expectation(const PopulationSpec& spec, const std::function<double(double)>& f) {
    const auto& gh = GaussHermite::get(spec.quadrature_nodes);
    const double sq2 = std::sqrt(2.0);
    const double inv_sqrt_pi = 0.56418958354775628695;
    double plus = 0.0, minus = 0.0;
    for (std::size_t j = 0; j < gh.nodes.size(); ++j) {
        plus += gh.weights[j] * f(spec.theta_star + sq2 * gh.nodes[j]);
        minus += gh.weights[j] * f(-spec.theta_star + sq2 * gh.nodes[j]);
    }
    return inv_sqrt_pi * (spec.alpha_star * plus + (1.0 - spec.alpha_star) * minus);
}

double big_f(const PopulationSpec& spec, double theta, double alpha) {
    const double t = half_log_odds(alpha);
    return population_expectation(spec, [&](double y) { return y * std::tanh(theta * y + t); });
}

double big_g(const PopulationSpec& spec, double theta, double alpha) {
    const double t = half_log_odds(alpha);
    return population_expectation(spec, [&](double y) { return stable_sigmoid(2.0 * (theta * y + t)); });
}

double tilted_alpha(const PopulationSpec& spec, double theta) {
    double lo = 0.0, hi = 1.0;
    // G(theta, 0) = 0 < alpha_star < 1 = G(theta, 1) and G is strictly
    // increasing in alpha, so the bracket always holds.
    while (hi - lo > spec.alpha_root_tolerance) {
        double mid = 0.5 * (lo + hi);
        if (big_g(spec, theta, mid) < spec.alpha_star)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double sem_population_step(const PopulationSpec& spec, double theta) {
    return big_f(spec, theta, tilted_alpha(spec, theta));
}

double vem_population_step(const PopulationSpec& spec, double theta) {
    return big_f(spec, theta, spec.alpha_star);
}

double population_nll_derivative(const PopulationSpec& spec, double theta, double alpha) {
    return big_f(spec, theta, alpha) - theta;
}

double population_entropic_loss_derivative(const PopulationSpec& spec, double theta) {
    return big_f(spec, theta, tilted_alpha(spec, theta)) - theta;
}

PopulationLosses population_losses(const PopulationSpec& spec, double theta) {
    const double a_star = spec.alpha_star;
    PopulationLosses out;
    out.nll = -population_expectation(
        spec, [&](double y) { return log_mixture_density(y, theta, a_star); });
    // Semi-dual value at the optimal tilt: the tilted negative log-likelihood
    // minus the KL adjustment between the true and tilted weights.
    const double at = tilted_alpha(spec, theta);
    double tilted_nll = -population_expectation(
        spec, [&](double y) { return log_mixture_density(y, theta, at); });
    double kl_adjust = a_star * (std::log(at) - std::log(a_star)) +
                       (1.0 - a_star) * (std::log1p(-at) - std::log1p(-a_star));
    out.entropic = tilted_nll + kl_adjust;
    return out;
}

double second_derivative(const std::function<double(double)>& f, double x, double h) {
    const double fx = f(x);
    double d1 = (f(x + h) - 2.0 * fx + f(x - h)) / (h * h);
    double d2 = (f(x + h / 2) - 2.0 * fx + f(x - h / 2)) / (h * h / 4.0);
    return (4.0 * d2 - d1) / 3.0;
}

}  // namespace sinkem
