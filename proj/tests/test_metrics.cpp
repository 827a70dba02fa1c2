#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sinkem/em.hpp"
#include "sinkem/metrics.hpp"
#include "sinkem/rng.hpp"

using namespace sinkem;

namespace {

DiscreteMixture atoms1d(std::vector<double> xs, std::vector<double> masses) {
    DiscreteMixture m;
    m.d = 1;
    m.atoms = std::move(xs);
    m.masses = std::move(masses);
    return m;
}

DiscreteMixture random_uniform_mixture(Rng& rng, int K, int d, double spread) {
    DiscreteMixture m;
    m.d = d;
    m.atoms.resize(static_cast<std::size_t>(K) * d);
    for (auto& a : m.atoms) a = spread * rng.normal();
    m.masses.assign(K, 1.0 / K);
    return m;
}

// exhaustive assignment oracle for uniform-mass pairs
double permutation_oracle(const DiscreteMixture& a, const DiscreteMixture& b) {
    const int K = a.K(), d = a.d;
    std::vector<int> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
        double total = 0.0;
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < d; ++j) {
                double diff = a.atoms[k * d + j] - b.atoms[perm[k] * d + j];
                total += diff * diff;
            }
        best = std::min(best, total / K);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("exact w2: identities") {
    Rng rng(1);
    auto a = random_uniform_mixture(rng, 4, 2, 2.0);
    CHECK(w2_squared_exact(a, a) < 1e-12);

    auto x = atoms1d({1.5}, {1.0});
    auto y = atoms1d({-0.7}, {1.0});
    CHECK(w2_squared_exact(x, y) == doctest::Approx(2.2 * 2.2).epsilon(1e-12));
}

TEST_CASE("exact w2 equals the permutation oracle on uniform K=3 pairs") {
    Rng rng(212);
    for (int trial = 0; trial < 25; ++trial) {
        auto a = random_uniform_mixture(rng, 3, 2, 3.0);
        auto b = random_uniform_mixture(rng, 3, 2, 3.0);
        CHECK(std::abs(w2_squared_exact(a, b) - permutation_oracle(a, b)) < 1e-10);
    }
}

TEST_CASE("exact w2 with general masses: simplex vs 1-d quantile coupling") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        int Ka = 2 + static_cast<int>(rng.next_u64() % 4);
        int Kb = 2 + static_cast<int>(rng.next_u64() % 4);
        DiscreteMixture a, b;
        a.d = b.d = 1;
        for (int k = 0; k < Ka; ++k) a.atoms.push_back(4.0 * rng.normal());
        for (int k = 0; k < Kb; ++k) b.atoms.push_back(4.0 * rng.normal());
        a.masses = rng.simplex(Ka);
        b.masses = rng.simplex(Kb);

        // 1-d optimal transport is the sorted quantile coupling
        std::vector<int> oa(Ka), ob(Kb);
        std::iota(oa.begin(), oa.end(), 0);
        std::iota(ob.begin(), ob.end(), 0);
        std::sort(oa.begin(), oa.end(), [&](int i, int j) { return a.atoms[i] < a.atoms[j]; });
        std::sort(ob.begin(), ob.end(), [&](int i, int j) { return b.atoms[i] < b.atoms[j]; });
        double cost = 0.0;
        int i = 0, j = 0;
        double ra = a.masses[oa[0]], rb = b.masses[ob[0]];
        while (i < Ka && j < Kb) {
            double m = std::min(ra, rb);
            double diff = a.atoms[oa[i]] - b.atoms[ob[j]];
            cost += m * diff * diff;
            ra -= m;
            rb -= m;
            if (ra <= 1e-15 && ++i < Ka) ra = a.masses[oa[i]];
            if (rb <= 1e-15 && ++j < Kb) rb = b.masses[ob[j]];
        }
        CHECK(std::abs(w2_squared_exact(a, b) - cost) < 1e-10);
    }
}

TEST_CASE("exact w2: symmetry and triangle inequality of the square root") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_uniform_mixture(rng, 4, 2, 2.5);
        auto b = random_uniform_mixture(rng, 4, 2, 2.5);
        auto c = random_uniform_mixture(rng, 4, 2, 2.5);
        CHECK(w2_squared_exact(a, b) == doctest::Approx(w2_squared_exact(b, a)).epsilon(1e-10));
        double ab = std::sqrt(w2_squared_exact(a, b));
        double bc = std::sqrt(w2_squared_exact(b, c));
        double ac = std::sqrt(w2_squared_exact(a, c));
        CHECK(ac <= ab + bc + 1e-10);
    }
}

TEST_CASE("exact w2 rejects large K") {
    Rng rng(4);
    auto a = random_uniform_mixture(rng, 13, 1, 1.0);
    auto b = random_uniform_mixture(rng, 13, 1, 1.0);
    CHECK_THROWS_WITH_AS(w2_squared_exact(a, b), doctest::Contains("entropic"), InvalidInput);
}

TEST_CASE("entropic w2: near-exact limit, 5% agreement, collapsed weights") {
    auto a = atoms1d({-3.0, 3.0}, {0.5, 0.5});
    CHECK(w2_squared_entropic(a, a, 1e-4, 2000) < 1e-3);

    Rng rng(5);
    for (int trial = 0; trial < 8; ++trial) {
        DiscreteMixture x = atoms1d({-1.0 + 0.2 * rng.normal(), 1.0 + 0.2 * rng.normal()}, {0.5, 0.5});
        DiscreteMixture y = atoms1d({-1.3 + 0.2 * rng.normal(), 1.4 + 0.2 * rng.normal()}, {0.5, 0.5});
        double exact = w2_squared_exact(x, y);
        double ent = w2_squared_entropic(x, y, 0.1, 2000);
        CHECK(std::abs(ent - exact) <= 0.05 * std::max(exact, 1e-6) + 1e-6);
    }

    auto collapsed = atoms1d({-1.0, 0.2, 1.0}, {0.5 - 5e-11, 1e-10, 0.5 - 5e-11});
    auto truth = atoms1d({-1.0, 0.0, 1.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    double v = w2_squared_entropic(collapsed, truth, 0.1, 1000);
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
}

TEST_CASE("entropic w2 is nonincreasing in the iteration count") {
    Rng rng(6);
    auto a = random_uniform_mixture(rng, 4, 2, 2.0);
    auto b = random_uniform_mixture(rng, 4, 2, 2.0);
    double prev = 1e300;
    for (int iters : {1, 2, 4, 8, 16, 32, 64, 128}) {
        double v = w2_squared_entropic(a, b, 0.1, iters);
        CHECK(v >= 0.0);
        CHECK(v <= prev + 1e-9);
        prev = v;
    }
}

TEST_CASE("accuracy: closed ball at 3 um on the spatial coordinates") {
    Matrix truth(5, 6, 0.0);
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 6; ++j) truth(k, j) = k * 10.0 + j;
    Matrix centers = truth;
    CHECK(accuracy(centers, truth) == doctest::Approx(1.0));

    centers(2, 0) += 10.0;  // one of five displaced by 10 um
    CHECK(accuracy(centers, truth) == doctest::Approx(0.8));

    centers = truth;
    centers(2, 0) += 3.0;  // exactly on the boundary counts
    CHECK(accuracy(centers, truth) == doctest::Approx(1.0));
    centers(2, 0) += 1e-9;
    CHECK(accuracy(centers, truth) == doctest::Approx(0.8));

    // monotone under shrinking displacement
    double prev = -1.0;
    for (double disp : {6.0, 4.0, 2.9, 1.0}) {
        centers = truth;
        centers(1, 1) += disp;
        double acc = accuracy(centers, truth);
        CHECK(acc >= prev);
        prev = acc;
    }

    // only spatial coordinates count
    centers = truth;
    centers(0, 4) += 100.0;  // a color coordinate
    CHECK(accuracy(centers, truth) == doctest::Approx(1.0));

    Matrix short_truth(3, 6, 0.0);
    CHECK_THROWS_AS(accuracy(centers, short_truth), InvalidInput);
}

TEST_CASE("mse: closed forms and random oracle") {
    Matrix truth(3, 6, 0.0);
    Matrix centers = truth;
    CHECK(mse(centers, truth) == doctest::Approx(0.0));

    Matrix one(1, 6, 0.0), one_t(1, 6, 0.0);
    double norm2 = 0.0;
    for (int j = 0; j < 6; ++j) {
        one(0, j) = 0.3 * (j + 1);
        norm2 += one(0, j) * one(0, j);
    }
    CHECK(mse(one, one_t) == doctest::Approx(norm2).epsilon(1e-12));

    Rng rng(7);
    Matrix c(3, 6), t(3, 6);
    double direct = 0.0;
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 6; ++j) {
            c(k, j) = rng.normal();
            t(k, j) = rng.normal();
            double diff = c(k, j) - t(k, j);
            direct += diff * diff;
        }
    CHECK(mse(c, t) == doctest::Approx(direct / 3.0).epsilon(1e-12));
}

TEST_CASE("accuracy and mse are invariant under a common rigid translation") {
    Rng rng(8);
    Matrix c(4, 6), t(4, 6);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c.data[i] = 3.0 * rng.normal();
        t.data[i] = 3.0 * rng.normal();
    }
    std::vector<double> shift(6);
    for (auto& s : shift) s = rng.normal();
    Matrix cs = c, ts = t;
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 6; ++j) {
            cs(k, j) += shift[j];
            ts(k, j) += shift[j];
        }
    CHECK(accuracy(cs, ts) == doctest::Approx(accuracy(c, t)));
    CHECK(mse(cs, ts) == doctest::Approx(mse(c, t)).epsilon(1e-12));
}

TEST_CASE("convergence_iteration rule") {
    std::vector<double> halving = {8.0, 4.0, 2.0, 1.0};
    CHECK(convergence_iteration(halving) == 3);

    std::vector<double> constant(5, 2.0);
    CHECK(convergence_iteration(constant) == 0);  // 2 < 1.5 * 2 at the first index

    std::vector<double> zeros(4, 0.0);
    CHECK(convergence_iteration(zeros) == 3);  // strict inequality never met -> final index

    std::vector<double> quick = {10.0, 1.4, 1.0};
    CHECK(convergence_iteration(quick) == 1);

    CHECK_THROWS_AS(convergence_iteration(std::span<const double>{}), InvalidInput);
}
