#include <doctest.h>

#include <cmath>

#include "sinkem/kernels.hpp"
#include "sinkem/rng.hpp"
#include "sinkem/sinkhorn.hpp"

using namespace sinkem;

namespace {

MixtureModel symmetric_pair(double theta, double alpha) {
    return MixtureModel::isotropic({alpha, 1.0 - alpha}, {{theta}, {-theta}}, 1.0);
}

// Plain-arithmetic Sinkhorn fixed point: u = w ./ (M v), v = (1/n) ./ (M^T u).
Matrix dense_sinkhorn_oracle(const Matrix& log_kernel, const std::vector<double>& w, int iters) {
    const std::size_t K = log_kernel.rows, n = log_kernel.cols;
    Matrix M(K, n);
    for (std::size_t t = 0; t < M.size(); ++t) M.data[t] = std::exp(log_kernel.data[t]);
    std::vector<double> u(K, 1.0), v(n, 1.0);
    for (int it = 0; it < iters; ++it) {
        for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += M(k, i) * v[i];
            u[k] = w[k] / s;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += M(k, i) * u[k];
            v[i] = 1.0 / (static_cast<double>(n) * s);
        }
    }
    Matrix plan(K, n);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < n; ++i) plan(k, i) = u[k] * M(k, i) * v[i];
    return plan;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mixture_quantile(double p, double theta, double alpha) {
    double lo = -60.0, hi = 60.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        double c = alpha * normal_cdf(mid - theta) + (1.0 - alpha) * normal_cdf(mid + theta);
        (c < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Matrix model_log_kernel(const MixtureModel& m, const Dataset& data) {
    auto cm = factorize(m);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), data.n(), logk);
    return logk;
}

}  // namespace

TEST_CASE("cost-free transport: product plan, no tilt") {
    std::vector<double> w = {0.2, 0.3, 0.5};

    // A flat component density (same q for every component and point) is the
    // cost-free case: kernel rows are log w_k + c, the potentials vanish and
    // the tilt is the identity.
    Matrix logk(3, 5);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 5; ++i) logk(k, i) = std::log(w[k]) - 1.7;
    auto c = sinkhorn_estep(logk, w, {});
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(c.plan(k, i) == doctest::Approx(w[k] / 5.0).epsilon(1e-12));
    auto tw = tilted_weights(c, w);
    for (int k = 0; k < 3; ++k) CHECK(tw[k] == doctest::Approx(w[k]).epsilon(1e-12));
    double mass = 0.0;
    for (double v : c.plan.data) mass += v;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

    // An all-equal weighted kernel also transports to the product plan, but
    // through a genuine tilt (weights enter the kernel, so equal entries mean
    // component densities proportional to 1/w_k).
    Matrix flat(3, 5, -1.7);
    auto c2 = sinkhorn_estep(flat, w, {});
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(c2.plan(k, i) == doctest::Approx(w[k] / 5.0).epsilon(1e-12));
    auto tw2 = tilted_weights(c2, w);
    double z = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    for (int k = 0; k < 3; ++k) CHECK(tw2[k] == doctest::Approx(w[k] * w[k] / z).epsilon(1e-10));
}

TEST_CASE("single component: uniform row regardless of kernel") {
    Rng rng(5);
    Matrix logk(1, 7);
    for (auto& v : logk.data) v = rng.normal();
    std::vector<double> w = {1.0};
    auto c = sinkhorn_estep(logk, w, {});
    for (std::size_t i = 0; i < 7; ++i) CHECK(c.plan(0, i) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("random kernel matches the plain-arithmetic oracle") {
    Rng rng(1234);
    Matrix logk(3, 7);
    for (auto& v : logk.data) v = rng.normal();
    std::vector<double> w = {0.2, 0.3, 0.5};
    SinkhornSettings s;
    s.max_iterations = 500;
    auto c = sinkhorn_estep(logk, w, s);
    CHECK(c.marginal_error < 1e-8);
    Matrix oracle = dense_sinkhorn_oracle(logk, w, 500);
    for (std::size_t t = 0; t < oracle.size(); ++t)
        CHECK(std::abs(c.plan.data[t] - oracle.data[t]) < 1e-10);
}

TEST_CASE("tilted weights: trivial and shift cases") {
    Coupling c;
    c.row_potentials = {0.0, 0.0, 0.0};
    std::vector<double> w = {0.5, 0.2, 0.3};
    auto a = tilted_weights(c, w);
    for (int k = 0; k < 3; ++k) CHECK(a[k] == doctest::Approx(w[k]).epsilon(1e-14));
    c.row_potentials = {3.3, 3.3, 3.3};
    auto b = tilted_weights(c, w);
    for (int k = 0; k < 3; ++k) CHECK(b[k] == doctest::Approx(w[k]).epsilon(1e-13));
}

TEST_CASE("population tilt at theta* is the true weight") {
    // quadrature-style uniform-mass grid at mixture quantiles approximates
    // the population measure
    const double theta = 1.0, alpha = 0.7;
    const int n = 20001;
    MixtureModel m = symmetric_pair(theta, alpha);
    Dataset grid;
    grid.d = 1;
    grid.points.resize(n);
    for (int i = 0; i < n; ++i)
        grid.points[i] = mixture_quantile((i + 0.5) / n, theta, alpha);
    SinkhornSettings s;
    s.max_iterations = 500;
    auto c = sinkhorn_estep(model_log_kernel(m, grid), m.weights, s);
    auto a = tilted_weights(c, m.weights);
    CHECK(std::abs(a[0] - alpha) < 1e-4);
}

TEST_CASE("empirical entropic loss: identities and domination") {
    // K = 1: coincides exactly with the negative log-likelihood
    MixtureModel single = MixtureModel::isotropic({1.0}, {{0.4}}, 1.3);
    Dataset data = sample(single, 40, 11);
    CHECK(empirical_entropic_loss(single, data, {}) ==
          doctest::Approx(negative_log_likelihood(single, data)).epsilon(1e-12));

    // symmetric weights on exactly symmetrized data: loss == nll
    MixtureModel sym = symmetric_pair(0.8, 0.5);
    Dataset half = sample(sym, 60, 21);
    Dataset mirrored;
    mirrored.d = 1;
    for (double y : half.points) {
        mirrored.points.push_back(y);
        mirrored.points.push_back(-y);
    }
    SinkhornSettings deep;
    deep.max_iterations = 1000;
    CHECK(std::abs(empirical_entropic_loss(sym, mirrored, deep) -
                   negative_log_likelihood(sym, mirrored)) < 1e-8);

    // random instances: loss dominates the nll
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        MixtureModel m = MixtureModel::isotropic(rng.simplex(3), {{-2.0}, {0.5}, {3.0}}, 1.0);
        bool tiny = false;
        for (double w : m.weights) tiny |= w < 1e-6;
        if (tiny) continue;
        Dataset d = sample(m, 50, rng.next_u64());
        CHECK(empirical_entropic_loss(m, d, {}) >= negative_log_likelihood(m, d) - 1e-9);
    }
}

TEST_CASE("plan factorizes as the tilted posterior after convergence") {
    Rng rng(31337);
    for (int trial = 0; trial < 20; ++trial) {
        int K = 2 + static_cast<int>(rng.next_u64() % 9);
        int n = 5 + static_cast<int>(rng.next_u64() % 196);
        std::vector<std::vector<double>> means(K, std::vector<double>(1));
        for (auto& mu : means) mu[0] = 3.0 * rng.normal();
        auto w = rng.simplex(K);
        for (auto& x : w) x = 0.02 / K + 0.98 * x;
        double s = 0.0;
        for (double x : w) s += x;
        for (auto& x : w) x /= s;
        MixtureModel m = MixtureModel::isotropic(w, means, 1.0);
        Dataset data = sample(m, n, rng.next_u64());

        SinkhornSettings settings;
        settings.max_iterations = 3000;
        settings.marginal_tolerance = 1e-10;
        Matrix logk = model_log_kernel(m, data);
        auto c = sinkhorn_estep(logk, m.weights, settings);
        REQUIRE(c.marginal_error < 1e-8);

        auto alpha = tilted_weights(c, m.weights);
        MixtureModel tilted = m;
        tilted.weights = alpha;
        auto post = vanilla_posterior(tilted, data);
        for (int k = 0; k < K; ++k)
            for (int i = 0; i < n; ++i)
                CHECK(std::abs(c.plan(k, i) * n - post.m(k, i)) < 1e-8);
    }
}

TEST_CASE("more iterations never increase the marginal error") {
    Rng rng(9);
    MixtureModel m = symmetric_pair(1.0, 0.65);
    Dataset data = sample(m, 120, 5);
    Matrix logk = model_log_kernel(m, data);
    double prev = 1e300;
    for (int iters : {5, 10, 20, 40, 80, 160}) {
        SinkhornSettings s;
        s.max_iterations = iters;
        auto c = sinkhorn_estep(logk, m.weights, s);
        CHECK(c.marginal_error <= prev + 1e-15);
        prev = c.marginal_error;
    }
}

TEST_CASE("row shift moves the potential and leaves the plan unchanged") {
    Rng rng(17);
    Matrix logk(3, 40);
    for (auto& v : logk.data) v = rng.normal();
    std::vector<double> w = {0.25, 0.35, 0.4};
    SinkhornSettings s;
    s.max_iterations = 800;
    auto base = sinkhorn_estep(logk, w, s);

    Matrix shifted = logk;
    const double cshift = 0.9;
    for (std::size_t i = 0; i < shifted.cols; ++i) shifted(1, i) += cshift;
    auto moved = sinkhorn_estep(shifted, w, s);
    CHECK(moved.row_potentials[1] - base.row_potentials[1] ==
          doctest::Approx(-cshift).epsilon(1e-9));
    for (std::size_t t = 0; t < base.plan.size(); ++t)
        CHECK(std::abs(base.plan.data[t] - moved.plan.data[t]) < 1e-10);
}

TEST_CASE("tolerance-based early stop and warm starts") {
    MixtureModel m = symmetric_pair(1.0, 0.8);
    Dataset data = sample(m, 200, 3);
    Matrix logk = model_log_kernel(m, data);
    SinkhornSettings s;
    s.max_iterations = 500;
    s.marginal_tolerance = 1e-9;
    auto cold = sinkhorn_estep(logk, m.weights, s);
    CHECK(cold.iterations_run < 500);
    CHECK(cold.marginal_error < 1e-8);

    s.warm_start = true;
    auto warm = sinkhorn_estep(logk, m.weights, s, &cold.row_potentials);
    CHECK(warm.iterations_run <= cold.iterations_run);
}

TEST_CASE("input validation") {
    Matrix logk(2, 3, 0.0);
    logk(0, 1) = std::numeric_limits<double>::infinity();
    std::vector<double> w = {0.5, 0.5};
    CHECK_THROWS_AS(sinkhorn_estep(logk, w, {}), InvalidInput);
    Matrix empty(0, 0);
    CHECK_THROWS_AS(sinkhorn_estep(empty, {}, {}), InvalidInput);
    Matrix ok(2, 3, 0.0);
    std::vector<double> bad_w = {0.7, 0.7};
    CHECK_THROWS_AS(sinkhorn_estep(ok, bad_w, {}), InvalidInput);
}
