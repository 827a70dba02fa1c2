#pragma once

#include <cstddef>

#include "sinkem/common.hpp"

namespace sinkem::kernels {

// Per-component Gaussian factorization, precomputed once per E-step:
//   chol     lower Cholesky factor L of each covariance (K * d*d, row-major)
//   log_norm log(w_k) - d/2 log(2pi) - sum_j log L_jj
struct ComponentModel {
    int K = 0;
    int d = 0;
    std::vector<double> means;     // K*d
    std::vector<double> chol;      // K*d*d
    std::vector<double> log_norm;  // K
};

// All kernels below are deterministic: outputs are bitwise independent of the
// number of OpenMP threads. Parallel loops only ever split across independent
// output elements; every reduction runs in a fixed serial order.

double logsumexp(const double* x, std::size_t n);

// out(k,i) = log( w_k * N(y_i; mu_k, Sigma_k) )
void gaussian_log_kernel(const ComponentModel& cm, const double* points, std::size_t n, Matrix& out);

// Column-wise softmax of the log kernel. Returns the index of the first
// column whose entries are all -inf (no representable density), or -1.
int posterior_from_log_kernel(const Matrix& log_kernel, Matrix& out);

// out[i] = logsumexp over k of log_kernel(k,i)
void per_point_log_density(const Matrix& log_kernel, double* out);

// Fixed-order mean of x[0..n)
double mean_fixed_order(const double* x, std::size_t n);

// Alternating row/column log-domain normalizations for the entropic coupling
// with row marginals w and uniform 1/n column marginals. f (size K) and h
// (size n) are the dual potentials, updated in place from their initial
// values. Runs `iters` full (row, column) sweeps; if tolerance > 0, stops
// early once the row-marginal deviation drops below it. Returns the number of
// sweeps performed.
int sinkhorn_sweeps(const Matrix& log_kernel, const double* log_w, int iters, double tolerance,
                    double* f, double* h);

// Max absolute deviation of plan row sums from w and column sums from 1/n,
// where plan(k,i) = exp(log_kernel(k,i) + f_k + h_i - log n).
double marginal_error(const Matrix& log_kernel, const double* f, const double* h, const double* w);

// plan(k,i) = exp(log_kernel(k,i) + f_k + h_i - log n)
void plan_from_potentials(const Matrix& log_kernel, const double* f, const double* h, Matrix& out);

// Responsibility-weighted counts and first moments:
//   Nk[k] = sum_i R(k,i),  Sk[k*d+j] = sum_i R(k,i) y_ij
void weighted_moments(const Matrix& R, const double* points, int d, double* Nk, double* Sk);

// Responsibility-weighted scatter around the given means:
//   out[k] = sum_i R(k,i) (y_i - m_k)(y_i - m_k)^T   (K * d*d)
void weighted_scatter(const Matrix& R, const double* points, int d, const double* means, double* out);

// Serial reference implementations, kept for testing and benchmarked against
// the parallel versions by tools/bench_kernels.
namespace serial {
void gaussian_log_kernel(const ComponentModel& cm, const double* points, std::size_t n, Matrix& out);
int posterior_from_log_kernel(const Matrix& log_kernel, Matrix& out);
void per_point_log_density(const Matrix& log_kernel, double* out);
int sinkhorn_sweeps(const Matrix& log_kernel, const double* log_w, int iters, double tolerance,
                    double* f, double* h);
double marginal_error(const Matrix& log_kernel, const double* f, const double* h, const double* w);
void plan_from_potentials(const Matrix& log_kernel, const double* f, const double* h, Matrix& out);
void weighted_moments(const Matrix& R, const double* points, int d, double* Nk, double* Sk);
void weighted_scatter(const Matrix& R, const double* points, int d, const double* means, double* out);
}  // namespace serial

}  // namespace sinkem::kernels
