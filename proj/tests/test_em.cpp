#include <doctest.h>

#include <cmath>

#include "sinkem/em.hpp"
#include "sinkem/rng.hpp"

using namespace sinkem;

namespace {

MixtureModel symmetric_pair(double theta, double alpha) {
    return MixtureModel::isotropic({alpha, 1.0 - alpha}, {{theta}, {-theta}}, 1.0);
}

Dataset symmetrize(const Dataset& half) {
    Dataset out;
    out.d = half.d;
    for (double y : half.points) {
        out.points.push_back(y);
        out.points.push_back(-y);
    }
    return out;
}

EngineConfig cfg(Engine e, int iters = 1, bool cov = false) {
    EngineConfig c;
    c.engine = e;
    c.max_iterations = iters;
    c.update_covariances = cov;
    return c;
}

}  // namespace

TEST_CASE("single-component step is the sample moment fit for every engine") {
    MixtureModel m0 = MixtureModel::isotropic({1.0}, {{5.0, -3.0}}, 4.0);
    Rng rng(12);
    Dataset data;
    data.d = 2;
    for (int i = 0; i < 200; ++i) {
        data.points.push_back(1.0 + rng.normal());
        data.points.push_back(-2.0 + 0.5 * rng.normal());
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < 200; ++i) {
        mx += data.points[2 * i];
        my += data.points[2 * i + 1];
    }
    mx /= 200.0;
    my /= 200.0;
    for (Engine e : {Engine::vanilla, Engine::overparameterized, Engine::sinkhorn}) {
        MixtureModel next = em_step(m0, data, cfg(e, 1, true));
        CHECK(next.means[0] == doctest::Approx(mx).epsilon(1e-12));
        CHECK(next.means[1] == doctest::Approx(my).epsilon(1e-12));
        // covariance equals the weighted scatter around the new mean
        double sxx = 0.0;
        for (int i = 0; i < 200; ++i) sxx += (data.points[2 * i] - mx) * (data.points[2 * i] - mx);
        CHECK(next.covariances[0] == doctest::Approx(sxx / 200.0).epsilon(1e-10));
    }
}

TEST_CASE("vanilla step preserves symmetry on symmetric data") {
    Rng rng(34);
    Dataset half;
    half.d = 1;
    for (int i = 0; i < 150; ++i) half.points.push_back(1.0 + rng.normal());
    Dataset data = symmetrize(half);
    MixtureModel m0 = symmetric_pair(0.7, 0.5);  // means (a, -a), equal weights
    MixtureModel next = em_step(m0, data, cfg(Engine::vanilla));
    CHECK(next.means[0] == doctest::Approx(-next.means[1]).epsilon(1e-10));
}

TEST_CASE("sinkhorn step matches the two-stage compositional oracle") {
    MixtureModel truth = symmetric_pair(1.0, 0.7);
    Dataset data = sample(truth, 1000, 314159);
    MixtureModel m0 = symmetric_pair(-2.0, 0.7);

    MixtureModel stepped = em_step(m0, data, cfg(Engine::sinkhorn));

    // oracle: run the solver, then the closed-form weighted mean
    auto cm = factorize(m0);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), data.n(), logk);
    Coupling c = sinkhorn_estep(logk, m0.weights, {});
    for (int k = 0; k < 2; ++k) {
        double num = 0.0, den = 0.0;
        for (int i = 0; i < data.n(); ++i) {
            num += c.plan(k, i) * data.points[i];
            den += c.plan(k, i);
        }
        CHECK(stepped.means[k] == doctest::Approx(num / den).epsilon(1e-12));
    }
}

TEST_CASE("fit: moment fit on one component is a fixed point") {
    Rng rng(56);
    Dataset data;
    data.d = 1;
    for (int i = 0; i < 100; ++i) data.points.push_back(0.7 * rng.normal() + 2.0);
    double mean = 0.0;
    for (double y : data.points) mean += y;
    mean /= 100.0;
    double var = 0.0;
    for (double y : data.points) var += (y - mean) * (y - mean);
    var /= 100.0;
    MixtureModel m0 = MixtureModel::isotropic({1.0}, {{mean}}, var);

    EngineConfig c = cfg(Engine::vanilla, 1, true);
    FitTrace trace = fit(m0, data, c);
    CHECK(trace.iterations.size() == 1);
    CHECK(trace.final_model.means[0] == doctest::Approx(mean).epsilon(1e-10));
    CHECK(trace.final_model.covariances[0] == doctest::Approx(var).epsilon(1e-10));
}

TEST_CASE("sEM on the equal mixture stays on the antidiagonal and finds the truth") {
    MixtureModel truth = MixtureModel::isotropic({0.5, 0.5}, {{-1.0}, {1.0}}, 1.0);
    Dataset half = sample(truth, 500, 42);
    Dataset data = symmetrize(half);  // exactly symmetric

    MixtureModel m0 = truth;
    m0.means = {-2.0, 2.0};
    EngineConfig c = cfg(Engine::sinkhorn, 300);
    c.record_losses = false;
    FitTrace trace = fit(m0, data, c);
    for (const auto& rec : trace.iterations)
        CHECK(std::abs(rec.means[0] + rec.means[1]) < 1e-6);
    CHECK(std::abs(trace.final_model.means[0] + 1.0) < 0.1);
    CHECK(std::abs(trace.final_model.means[1] - 1.0) < 0.1);
}

TEST_CASE("map_m_step_means: flat prior, empty component, quadratic-objective oracle") {
    Rng rng(78);
    Dataset data;
    data.d = 2;
    for (int i = 0; i < 60; ++i) {
        data.points.push_back(rng.normal() + 1.0);
        data.points.push_back(rng.normal() - 1.0);
    }
    Responsibilities resp;
    resp.m = Matrix(1, 60);
    for (auto& r : resp.m.data) r = 0.2 + 0.8 * rng.uniform01();

    std::vector<double> cov = {1.3, 0.2, 0.2, 0.9};
    std::vector<double> prior_mean = {4.0, -3.0};
    std::vector<double> prior_cov = {0.5, 0.0, 0.0, 2.0};

    // flat prior reduces to the plain weighted mean
    auto flat = map_m_step_means(resp, data, cov, prior_mean, prior_cov, true);
    double num0 = 0.0, num1 = 0.0, den = 0.0;
    for (int i = 0; i < 60; ++i) {
        num0 += resp.m(0, i) * data.points[2 * i];
        num1 += resp.m(0, i) * data.points[2 * i + 1];
        den += resp.m(0, i);
    }
    CHECK(flat[0] == doctest::Approx(num0 / den).epsilon(1e-12));
    CHECK(flat[1] == doctest::Approx(num1 / den).epsilon(1e-12));

    // no responsibility mass: the prior mean comes back exactly
    Responsibilities zero;
    zero.m = Matrix(1, 60, 0.0);
    auto back = map_m_step_means(zero, data, cov, prior_mean, prior_cov, false);
    CHECK(back[0] == doctest::Approx(prior_mean[0]).epsilon(1e-12));
    CHECK(back[1] == doctest::Approx(prior_mean[1]).epsilon(1e-12));

    // gradient-descent oracle on the explicit quadratic objective
    auto map = map_m_step_means(resp, data, cov, prior_mean, prior_cov, false);
    // objective: sum_i r_i logN(y_i; mu, cov) + logN(mu; mu_a, prior_cov)
    auto objective = [&](double mu0, double mu1) {
        const double det = cov[0] * cov[3] - cov[1] * cov[2];
        const double i00 = cov[3] / det, i01 = -cov[1] / det, i11 = cov[0] / det;
        double total = 0.0;
        for (int i = 0; i < 60; ++i) {
            double d0 = data.points[2 * i] - mu0, d1 = data.points[2 * i + 1] - mu1;
            total += -0.5 * resp.m(0, i) * (d0 * (i00 * d0 + i01 * d1) + d1 * (i01 * d0 + i11 * d1));
        }
        double p0 = mu0 - prior_mean[0], p1 = mu1 - prior_mean[1];
        total += -0.5 * (p0 * p0 / prior_cov[0] + p1 * p1 / prior_cov[3]);
        return total;
    };
    double bx = map[0], by = map[1];
    // local grid refinement around the solver output must not improve the objective
    double best = objective(bx, by);
    for (double h : {1e-3, 1e-4})
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                CHECK(objective(bx + h * dx, by + h * dy) <= best + 1e-10);
    // and a crude descent from far away lands at the same point
    double gx = 0.0, gy = 0.0;
    for (int it = 0; it < 20000; ++it) {
        const double h = 1e-4;
        double d0 = (objective(gx + h, gy) - objective(gx - h, gy)) / (2 * h);
        double d1 = (objective(gx, gy + h) - objective(gx, gy - h)) / (2 * h);
        gx += 2e-2 * d0 / 60.0;
        gy += 2e-2 * d1 / 60.0;
    }
    CHECK(std::abs(gx - bx) < 1e-6);
    CHECK(std::abs(gy - by) < 1e-6);
}

TEST_CASE("degenerate components: error for fixed-weight engines, clamp for oEM") {
    // second component far away with no data near it
    MixtureModel m0 = MixtureModel::isotropic({0.5, 0.5}, {{0.0}, {1e6}}, 1.0);
    Rng rng(90);
    Dataset data;
    data.d = 1;
    for (int i = 0; i < 50; ++i) data.points.push_back(rng.normal());

    CHECK_THROWS_WITH_AS(em_step(m0, data, cfg(Engine::vanilla)), doctest::Contains("component 1"),
                         DegenerateCluster);

    FitTrace trace = fit(m0, data, cfg(Engine::vanilla, 10));
    CHECK(trace.termination_reason == "degenerate_cluster:1");

    FitTrace otrace = fit(m0, data, cfg(Engine::overparameterized, 5));
    CHECK(otrace.termination_reason == "max_iterations");
    CHECK(otrace.weight_clamps > 0);
    for (const auto& rec : otrace.iterations) {
        double s = 0.0;
        for (double w : rec.weights) {
            CHECK(w > 0.0);
            s += w;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("descent: sEM entropic loss and vEM nll are nonincreasing") {
    Rng rng(2718);
    for (int trial = 0; trial < 10; ++trial) {
        int K = 2 + static_cast<int>(rng.next_u64() % 3);
        int d = 1 + static_cast<int>(rng.next_u64() % 2);
        int n = 50 + static_cast<int>(rng.next_u64() % 200);
        std::vector<std::vector<double>> means(K, std::vector<double>(d));
        for (auto& mu : means)
            for (auto& v : mu) v = 2.5 * rng.normal();
        auto w = rng.simplex(K);
        for (auto& x : w) x = 0.1 / K + 0.9 * x;
        double s = 0.0;
        for (double x : w) s += x;
        for (auto& x : w) x /= s;
        MixtureModel truth = MixtureModel::isotropic(w, means, 1.0);
        Dataset data = sample(truth, n, rng.next_u64());

        MixtureModel m0 = truth;
        for (auto& v : m0.means) v += 0.7 * rng.normal();

        EngineConfig sem = cfg(Engine::sinkhorn, 40);
        FitTrace st = fit(m0, data, sem);
        for (std::size_t t = 1; t < st.iterations.size(); ++t)
            CHECK(st.iterations[t].entropic_loss <= st.iterations[t - 1].entropic_loss + 1e-7);

        EngineConfig vem = cfg(Engine::vanilla, 40);
        FitTrace vt = fit(m0, data, vem);
        for (std::size_t t = 1; t < vt.iterations.size(); ++t)
            CHECK(vt.iterations[t].nll <= vt.iterations[t - 1].nll + 1e-10);
    }
}

TEST_CASE("engine equivalence at uniform weights on symmetric data") {
    MixtureModel truth = symmetric_pair(1.0, 0.5);
    Dataset data = symmetrize(sample(truth, 400, 7));
    MixtureModel m0 = symmetric_pair(-1.6, 0.5);
    EngineConfig v = cfg(Engine::vanilla, 30);
    EngineConfig s = cfg(Engine::sinkhorn, 30);
    s.sinkhorn.max_iterations = 400;
    FitTrace vt = fit(m0, data, v);
    FitTrace st = fit(m0, data, s);
    REQUIRE(vt.iterations.size() == st.iterations.size());
    for (std::size_t t = 0; t < vt.iterations.size(); ++t)
        for (int k = 0; k < 2; ++k)
            CHECK(std::abs(vt.iterations[t].means[k] - st.iterations[t].means[k]) < 1e-6);
}

TEST_CASE("permutation equivariance of the whole trace") {
    MixtureModel truth = MixtureModel::isotropic({0.3, 0.7}, {{-1.0}, {1.5}}, 1.0);
    Dataset data = sample(truth, 200, 99);
    MixtureModel m0 = truth;
    m0.means = {0.4, -0.9};

    MixtureModel swapped = m0;
    std::swap(swapped.weights[0], swapped.weights[1]);
    std::swap(swapped.means[0], swapped.means[1]);

    for (Engine e : {Engine::vanilla, Engine::overparameterized, Engine::sinkhorn}) {
        FitTrace a = fit(m0, data, cfg(e, 15));
        FitTrace b = fit(swapped, data, cfg(e, 15));
        REQUIRE(a.iterations.size() == b.iterations.size());
        for (std::size_t t = 0; t < a.iterations.size(); ++t) {
            CHECK(a.iterations[t].means[0] == doctest::Approx(b.iterations[t].means[1]).epsilon(1e-12));
            CHECK(a.iterations[t].means[1] == doctest::Approx(b.iterations[t].means[0]).epsilon(1e-12));
            CHECK(a.iterations[t].weights[0] == doctest::Approx(b.iterations[t].weights[1]).epsilon(1e-12));
        }
    }
}

TEST_CASE("trace serialization carries config, seed and reason") {
    MixtureModel truth = symmetric_pair(1.0, 0.6);
    Dataset data = sample(truth, 50, 1001);
    EngineConfig c = cfg(Engine::sinkhorn, 3);
    FitTrace trace = fit(truth, data, c);
    std::string csv = trace.to_csv();
    CHECK(csv.find("iter,nll,entropic_loss,time_ms,weight_0,weight_1,mean_0_0,mean_1_0") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 iterations
    std::string header = trace.header_json(c, data.seed);
    CHECK(header.find("\"seed\": 1001") != std::string::npos);
    CHECK(header.find("max_iterations") != std::string::npos);
    CHECK(trace.hash() != 0);
}

TEST_CASE("time budget terminates the trace") {
    MixtureModel truth = symmetric_pair(1.0, 0.7);
    Dataset data = sample(truth, 2000, 5);
    MixtureModel m0 = symmetric_pair(-2.0, 0.7);
    EngineConfig c = cfg(Engine::sinkhorn, 100000);
    c.time_budget_seconds = 0.15;
    c.record_losses = false;
    FitTrace trace = fit(m0, data, c);
    CHECK(trace.termination_reason == "time_budget");
    CHECK(trace.iterations.size() >= 1);
    CHECK(trace.iterations.back().time_ms >= 150.0);
}
