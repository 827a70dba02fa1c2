#pragma once

#include <span>
#include <vector>

#include "sinkem/common.hpp"

namespace sinkem {

// Weighted point masses in R^d; the estimation-error metrics compare the true
// parameter mixture against a fitted one.
struct DiscreteMixture {
    int d = 0;
    std::vector<double> atoms;   // K*d
    std::vector<double> masses;  // K, sums to 1

    int K() const { return d == 0 ? 0 : static_cast<int>(atoms.size()) / d; }
    void validate() const;
};

// Exact squared 2-Wasserstein distance with squared Euclidean ground cost.
// Uniform equal-size instances go through the assignment solver; everything
// else through an exact transportation simplex. K is capped at 12 per side;
// larger instances should use w2_squared_entropic.
double w2_squared_exact(const DiscreteMixture& a, const DiscreteMixture& b);

// Entropy-regularized transport cost <C, pi> at the entropic optimizer
// (transport term only, the reported convention).
double w2_squared_entropic(const DiscreteMixture& a, const DiscreteMixture& b, double reg = 0.1,
                           int iterations = 1000);

// Fraction of centers within `radius` (closed ball) of the matching truth
// entry, measured on the first min(3, d) coordinates. Components are matched
// by index.
double accuracy(const Matrix& centers, const Matrix& truth, double radius = 3.0);

// Mean squared full-dimension Euclidean distance over index-matched pairs.
double mse(const Matrix& centers, const Matrix& truth);

// Index-free variants: centers are first matched to truth by the
// cost-minimizing assignment (extension for runs without identifiable
// component order; off by default in the experiment harness).
double accuracy_assigned(const Matrix& centers, const Matrix& truth, double radius = 3.0);
double mse_assigned(const Matrix& centers, const Matrix& truth);

// Error definition that weights squared distances by the true mixing weights
// and minimizes over label permutations, ignoring fitted weights entirely
// (so label switches are invisible to it). K <= 8.
double xu_weighted_permutation_error(const Matrix& centers, const Matrix& truth,
                                     std::span<const double> true_weights);

// Smallest index t with errors[t] < factor * errors.back(); the final index
// when no iteration satisfies the strict inequality.
int convergence_iteration(std::span<const double> errors, double factor = 1.5);

// Minimal-cost assignment of an n x n cost matrix; returns the total cost and
// fills row_to_col.
double solve_assignment(const Matrix& cost, std::vector<int>& row_to_col);

}  // namespace sinkem
