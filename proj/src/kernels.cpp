#include "sinkem/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace sinkem::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(w_k N(y; mu_k, Sigma_k)) for one component/point pair via forward
// substitution with the component's Cholesky factor.
inline double log_kernel_entry(const ComponentModel& cm, int k, const double* y, double* z) {
    const int d = cm.d;
    const double* mu = cm.means.data() + static_cast<std::size_t>(k) * d;
    const double* L = cm.chol.data() + static_cast<std::size_t>(k) * d * d;
    double q = 0.0;
    for (int r = 0; r < d; ++r) {
        double s = y[r] - mu[r];
        for (int c = 0; c < r; ++c) s -= L[r * d + c] * z[c];
        z[r] = s / L[r * d + r];
        q += z[r] * z[r];
    }
    return cm.log_norm[k] - 0.5 * q;
}

inline void softmax_column(const Matrix& logk, std::size_t i, Matrix& out, bool& bad) {
    const std::size_t K = logk.rows, n = logk.cols;
    double m = kNegInf;
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, logk.data[k * n + i]);
    if (!(m > kNegInf)) {
        bad = true;
        return;
    }
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logk.data[k * n + i] - m);
    for (std::size_t k = 0; k < K; ++k) out.data[k * n + i] = std::exp(logk.data[k * n + i] - m) / s;
}

inline double column_lse(const Matrix& logk, std::size_t i) {
    const std::size_t K = logk.rows, n = logk.cols;
    double m = kNegInf;
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, logk.data[k * n + i]);
    if (!(m > kNegInf)) return kNegInf;
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logk.data[k * n + i] - m);
    return m + std::log(s);
}

// f update for one row: f_k = log n - logsumexp_i(h_i + logk(k,i) - log w_k)
inline double row_update_one(const Matrix& logk, const double* h, double log_w_k, std::size_t k,
                             double log_n) {
    const std::size_t n = logk.cols;
    const double* row = logk.row(k);
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, h[i] + row[i]);
    m -= log_w_k;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(h[i] + row[i] - log_w_k - m);
    return log_n - (m + std::log(s));
}

// h update for one column: h_i = -logsumexp_k(f_k + logk(k,i))
inline double col_update_one(const Matrix& logk, const double* f, std::size_t i) {
    const std::size_t K = logk.rows, n = logk.cols;
    double m = kNegInf;
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, f[k] + logk.data[k * n + i]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(f[k] + logk.data[k * n + i] - m);
    return -(m + std::log(s));
}

inline double row_marginal_dev(const Matrix& logk, const double* f, const double* h,
                               const double* w, std::size_t k, double log_n) {
    const std::size_t n = logk.cols;
    const double* row = logk.row(k);
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, h[i] + row[i]);
    if (!(m > kNegInf)) return w[k];
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(h[i] + row[i] - m);
    return std::abs(std::exp(f[k] - log_n + m + std::log(s)) - w[k]);
}

inline void moments_one_row(const Matrix& R, const double* points, int d, std::size_t k,
                            double* Nk, double* Sk) {
    const std::size_t n = R.cols;
    const double* row = R.row(k);
    double nk = 0.0;
    double* sk = Sk + static_cast<std::size_t>(k) * d;
    for (int j = 0; j < d; ++j) sk[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = row[i];
        nk += r;
        const double* y = points + i * d;
        for (int j = 0; j < d; ++j) sk[j] += r * y[j];
    }
    Nk[k] = nk;
}

inline void scatter_one_row(const Matrix& R, const double* points, int d, const double* means,
                            std::size_t k, double* out) {
    const std::size_t n = R.cols;
    const double* row = R.row(k);
    const double* mu = means + static_cast<std::size_t>(k) * d;
    double* S = out + static_cast<std::size_t>(k) * d * d;
    for (int a = 0; a < d * d; ++a) S[a] = 0.0;
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = row[i];
        const double* y = points + i * d;
        for (int a = 0; a < d; ++a) diff[a] = y[a] - mu[a];
        for (int a = 0; a < d; ++a)
            for (int b = a; b < d; ++b) S[a * d + b] += r * diff[a] * diff[b];
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < a; ++b) S[a * d + b] = S[b * d + a];
}

inline bool use_omp() { return !omp_in_parallel(); }

}  // namespace

double logsumexp(const double* x, std::size_t n) {
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
    if (!(m > kNegInf)) return kNegInf;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

void gaussian_log_kernel(const ComponentModel& cm, const double* points, std::size_t n, Matrix& out) {
    out.rows = cm.K;
    out.cols = n;
    out.data.resize(static_cast<std::size_t>(cm.K) * n);
#pragma omp parallel if (use_omp() && n > 256)
    {
        std::vector<double> z(cm.d);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
            for (int k = 0; k < cm.K; ++k)
                out.data[static_cast<std::size_t>(k) * n + i] =
                    log_kernel_entry(cm, k, points + i * cm.d, z.data());
        }
    }
}

int posterior_from_log_kernel(const Matrix& logk, Matrix& out) {
    out.rows = logk.rows;
    out.cols = logk.cols;
    out.data.resize(logk.size());
    const std::size_t n = logk.cols;
    std::vector<unsigned char> bad(n, 0);
#pragma omp parallel for schedule(static) if (use_omp() && n > 256)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        bool b = false;
        softmax_column(logk, i, out, b);
        bad[i] = b ? 1 : 0;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (bad[i]) return static_cast<int>(i);
    return -1;
}

void per_point_log_density(const Matrix& logk, double* out) {
    const std::size_t n = logk.cols;
#pragma omp parallel for schedule(static) if (use_omp() && n > 256)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[i] = column_lse(logk, i);
}

double mean_fixed_order(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s / static_cast<double>(n);
}

namespace {

// Absorption-stabilized sweeps: the log potentials f, h are folded into a
// rescaled kernel M(k,i) = exp(logk(k,i) + f_k + h_i - log n) and the
// normalizations run in plain arithmetic on multiplicative corrections u, v.
// When a correction drifts out of range (or a rescaled row/column underflows
// entirely) the corrections are absorbed back into f, h, one sweep runs in
// the pure log domain, and M is rebuilt. Identical fixed point, a fraction of
// the exp calls.
template <bool Parallel>
int stabilized_sweeps(const Matrix& logk, const double* log_w, int iters, double tolerance,
                      double* f, double* h) {
    const std::size_t K = logk.rows, n = logk.cols;
    const double log_n = std::log(static_cast<double>(n));
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> w(K);
    for (std::size_t k = 0; k < K; ++k) w[k] = std::exp(log_w[k]);
    Matrix M(K, n);
    std::vector<double> u(K, 1.0), v(n, 1.0), r(K), c(n);

    auto rebuild = [&]() {
#pragma omp parallel for schedule(static) if (Parallel && use_omp() && n > 512)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
            for (std::size_t k = 0; k < K; ++k)
                M.data[k * n + i] = std::exp(logk.data[k * n + i] + f[k] + h[i] - log_n);
    };
    auto absorb = [&]() {
        for (std::size_t k = 0; k < K; ++k) {
            f[k] += std::log(u[k]);
            u[k] = 1.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            h[i] += std::log(v[i]);
            v[i] = 1.0;
        }
    };
    auto log_sweep = [&]() {
        std::vector<double> f_new(K);
#pragma omp parallel for schedule(static) if (Parallel && use_omp() && K > 1 && n > 512)
        for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k)
            f_new[k] = row_update_one(logk, h, log_w[k], k, log_n);
        std::copy(f_new.begin(), f_new.end(), f);
#pragma omp parallel for schedule(static) if (Parallel && use_omp() && n > 512)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
            h[i] = col_update_one(logk, f, i);
    };

    rebuild();
    int sweeps = 0;
    for (int t = 0; t < iters; ++t) {
#pragma omp parallel for schedule(static) if (Parallel && use_omp() && K > 1 && n > 512)
        for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k) {
            double s = 0.0;
            const double* row = M.row(k);
            for (std::size_t i = 0; i < n; ++i) s += row[i] * v[i];
            r[k] = s;
        }
        bool bad = false;
        double row_err = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            row_err = std::max(row_err, std::abs(u[k] * r[k] - w[k]));
            if (!(r[k] > 0.0) || !std::isfinite(r[k])) bad = true;
        }
        if (!bad) {
            for (std::size_t k = 0; k < K; ++k) u[k] = w[k] / r[k];
#pragma omp parallel for schedule(static) if (Parallel && use_omp() && n > 512)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < K; ++k) s += M.data[k * n + i] * u[k];
                c[i] = s;
            }
            for (std::size_t i = 0; i < n; ++i)
                if (!(c[i] > 0.0) || !std::isfinite(c[i])) bad = true;
            if (!bad)
                for (std::size_t i = 0; i < n; ++i) v[i] = inv_n / c[i];
        }
        if (bad) {
            // a rescaled row or column left the representable range: absorb
            // and take this sweep in the log domain
            absorb();
            log_sweep();
            rebuild();
            ++sweeps;
            continue;
        }
        ++sweeps;
        if (tolerance > 0.0 && t > 0 && row_err < tolerance) break;
        bool drift = false;
        for (std::size_t k = 0; k < K && !drift; ++k) drift = u[k] > 1e90 || u[k] < 1e-90;
        for (std::size_t i = 0; i < n && !drift; ++i) drift = v[i] > 1e90 || v[i] < 1e-90;
        if (drift) {
            absorb();
            rebuild();
        }
    }
    absorb();
    return sweeps;
}

}  // namespace

int sinkhorn_sweeps(const Matrix& logk, const double* log_w, int iters, double tolerance,
                    double* f, double* h) {
    return stabilized_sweeps<true>(logk, log_w, iters, tolerance, f, h);
}

double marginal_error(const Matrix& logk, const double* f, const double* h, const double* w) {
    const std::size_t K = logk.rows, n = logk.cols;
    const double log_n = std::log(static_cast<double>(n));
    std::vector<double> dev_r(K), dev_c(n);
#pragma omp parallel for schedule(static) if (use_omp() && K > 1 && n > 512)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k)
        dev_r[k] = row_marginal_dev(logk, f, h, w, k, log_n);
#pragma omp parallel for schedule(static) if (use_omp() && n > 512)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double m = kNegInf;
        for (std::size_t k = 0; k < K; ++k) m = std::max(m, f[k] + logk.data[k * n + i]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(f[k] + logk.data[k * n + i] - m);
        dev_c[i] = std::abs(std::exp(h[i] - log_n + m + std::log(s)) - 1.0 / static_cast<double>(n));
    }
    double err = 0.0;
    for (std::size_t k = 0; k < K; ++k) err = std::max(err, dev_r[k]);
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, dev_c[i]);
    return err;
}

void plan_from_potentials(const Matrix& logk, const double* f, const double* h, Matrix& out) {
    const std::size_t K = logk.rows, n = logk.cols;
    out.rows = K;
    out.cols = n;
    out.data.resize(K * n);
    const double log_n = std::log(static_cast<double>(n));
#pragma omp parallel for schedule(static) if (use_omp() && n > 512)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
        for (std::size_t k = 0; k < K; ++k)
            out.data[k * n + i] = std::exp(logk.data[k * n + i] + f[k] + h[i] - log_n);
}

void weighted_moments(const Matrix& R, const double* points, int d, double* Nk, double* Sk) {
    const std::size_t K = R.rows;
#pragma omp parallel for schedule(static) if (use_omp() && K > 1)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k)
        moments_one_row(R, points, d, k, Nk, Sk);
}

void weighted_scatter(const Matrix& R, const double* points, int d, const double* means, double* out) {
    const std::size_t K = R.rows;
#pragma omp parallel for schedule(static) if (use_omp() && K > 1)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k)
        scatter_one_row(R, points, d, means, k, out);
}

namespace serial {

void gaussian_log_kernel(const ComponentModel& cm, const double* points, std::size_t n, Matrix& out) {
    out.rows = cm.K;
    out.cols = n;
    out.data.resize(static_cast<std::size_t>(cm.K) * n);
    std::vector<double> z(cm.d);
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < cm.K; ++k)
            out.data[static_cast<std::size_t>(k) * n + i] =
                log_kernel_entry(cm, k, points + i * cm.d, z.data());
}

int posterior_from_log_kernel(const Matrix& logk, Matrix& out) {
    out.rows = logk.rows;
    out.cols = logk.cols;
    out.data.resize(logk.size());
    for (std::size_t i = 0; i < logk.cols; ++i) {
        bool b = false;
        softmax_column(logk, i, out, b);
        if (b) return static_cast<int>(i);
    }
    return -1;
}

void per_point_log_density(const Matrix& logk, double* out) {
    for (std::size_t i = 0; i < logk.cols; ++i) out[i] = column_lse(logk, i);
}

int sinkhorn_sweeps(const Matrix& logk, const double* log_w, int iters, double tolerance,
                    double* f, double* h) {
    return stabilized_sweeps<false>(logk, log_w, iters, tolerance, f, h);
}

double marginal_error(const Matrix& logk, const double* f, const double* h, const double* w) {
    const std::size_t K = logk.rows, n = logk.cols;
    const double log_n = std::log(static_cast<double>(n));
    double err = 0.0;
    for (std::size_t k = 0; k < K; ++k) err = std::max(err, row_marginal_dev(logk, f, h, w, k, log_n));
    for (std::size_t i = 0; i < n; ++i) {
        double m = kNegInf;
        for (std::size_t k = 0; k < K; ++k) m = std::max(m, f[k] + logk.data[k * n + i]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(f[k] + logk.data[k * n + i] - m);
        err = std::max(err, std::abs(std::exp(h[i] - log_n + m + std::log(s)) - 1.0 / static_cast<double>(n)));
    }
    return err;
}

void plan_from_potentials(const Matrix& logk, const double* f, const double* h, Matrix& out) {
    const std::size_t K = logk.rows, n = logk.cols;
    out.rows = K;
    out.cols = n;
    out.data.resize(K * n);
    const double log_n = std::log(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < K; ++k)
            out.data[k * n + i] = std::exp(logk.data[k * n + i] + f[k] + h[i] - log_n);
}

void weighted_moments(const Matrix& R, const double* points, int d, double* Nk, double* Sk) {
    for (std::size_t k = 0; k < R.rows; ++k) moments_one_row(R, points, d, k, Nk, Sk);
}

void weighted_scatter(const Matrix& R, const double* points, int d, const double* means, double* out) {
    for (std::size_t k = 0; k < R.rows; ++k) scatter_one_row(R, points, d, means, k, out);
}

}  // namespace serial

}  // namespace sinkem::kernels
