// Serial-vs-OpenMP comparison for the data-parallel kernels.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <vector>

#include "sinkem/kernels.hpp"
#include "sinkem/rng.hpp"

using namespace sinkem;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

kernels::ComponentModel random_components(Rng& rng, int K, int d) {
    kernels::ComponentModel cm;
    cm.K = K;
    cm.d = d;
    cm.means.resize(K * d);
    for (auto& m : cm.means) m = 3.0 * rng.normal();
    cm.chol.assign(static_cast<std::size_t>(K) * d * d, 0.0);
    cm.log_norm.resize(K);
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < d; ++j)
            cm.chol[static_cast<std::size_t>(k) * d * d + j * d + j] = 0.5 + rng.uniform01();
        cm.log_norm[k] = -std::log(static_cast<double>(K)) - 0.918938533 * d;
    }
    return cm;
}

}  // namespace

int main() {
    Rng rng(42);
    std::printf("threads available: %d\n\n", omp_get_max_threads());
    std::printf("%-34s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

    {
        const int K = 5, d = 6, n = 100000;
        auto cm = random_components(rng, K, d);
        std::vector<double> pts(static_cast<std::size_t>(n) * d);
        for (auto& p : pts) p = 3.0 * rng.normal();
        Matrix a, b;
        double ts = time_best_of(3, [&] { kernels::serial::gaussian_log_kernel(cm, pts.data(), n, a); });
        double tp = time_best_of(3, [&] { kernels::gaussian_log_kernel(cm, pts.data(), n, b); });
        std::printf("%-34s %10.2f %10.2f %7.2fx\n", "gaussian_log_kernel K=5 d=6 n=1e5", ts, tp, ts / tp);

        Matrix ra, rb;
        ts = time_best_of(3, [&] { kernels::serial::posterior_from_log_kernel(a, ra); });
        tp = time_best_of(3, [&] { kernels::posterior_from_log_kernel(a, rb); });
        std::printf("%-34s %10.2f %10.2f %7.2fx\n", "posterior_from_log_kernel", ts, tp, ts / tp);

        std::vector<double> Nk(K), Sk(K * d), Nk2(K), Sk2(K * d);
        ts = time_best_of(3, [&] { kernels::serial::weighted_moments(ra, pts.data(), d, Nk.data(), Sk.data()); });
        tp = time_best_of(3, [&] { kernels::weighted_moments(ra, pts.data(), d, Nk2.data(), Sk2.data()); });
        std::printf("%-34s %10.2f %10.2f %7.2fx\n", "weighted_moments", ts, tp, ts / tp);
    }

    {
        const int K = 10, n = 5000, iters = 200;
        auto cm = random_components(rng, K, 1);
        std::vector<double> pts(n);
        for (auto& p : pts) p = 3.0 * rng.normal();
        Matrix logk;
        kernels::serial::gaussian_log_kernel(cm, pts.data(), n, logk);
        std::vector<double> logw(K, -std::log(static_cast<double>(K)));
        std::vector<double> f(K), h(n);
        double ts = time_best_of(3, [&] {
            std::fill(f.begin(), f.end(), 0.0);
            std::fill(h.begin(), h.end(), 0.0);
            kernels::serial::sinkhorn_sweeps(logk, logw.data(), iters, 0.0, f.data(), h.data());
        });
        std::vector<double> f2(K), h2(n);
        double tp = time_best_of(3, [&] {
            std::fill(f2.begin(), f2.end(), 0.0);
            std::fill(h2.begin(), h2.end(), 0.0);
            kernels::sinkhorn_sweeps(logk, logw.data(), iters, 0.0, f2.data(), h2.data());
        });
        std::printf("%-34s %10.2f %10.2f %7.2fx\n", "sinkhorn_sweeps K=10 n=5000 it=200", ts, tp, ts / tp);
        bool identical = f == f2 && h == h2;
        std::printf("\npotentials bitwise identical across implementations: %s\n",
                    identical ? "yes" : "NO");
        return identical ? 0 : 1;
    }
}
