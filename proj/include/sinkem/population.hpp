#pragma once

#include <functional>
#include <vector>

#include "sinkem/common.hpp"

namespace sinkem {

// Population-limit machinery for the two-component symmetric-mean model with
// component weight alpha_star on the +theta_star side. All expectations are
// Gauss-Hermite quadrature applied separately to the two Gaussian components
// (change of variables y = +-theta_star + sqrt(2) u).
struct PopulationSpec {
    double theta_star = 1.0;
    double alpha_star = 0.7;
    int quadrature_nodes = 1601;
    double alpha_root_tolerance = 1e-12;

    void validate() const {
        if (!(theta_star > 0.0)) throw InvalidInput("theta_star: must be > 0");
        if (!(alpha_star >= 0.5) || !(alpha_star < 1.0)) throw InvalidInput("alpha_star: must lie in [0.5, 1)");
        if (quadrature_nodes < 3) throw InvalidInput("quadrature_nodes: must be >= 3");
        if (!(alpha_root_tolerance > 0.0)) throw InvalidInput("alpha_root_tolerance: must be > 0");
    }
};

// Physicists' Gauss-Hermite rule (weight e^{-u^2}); nodes ascending, weights
// summing to sqrt(pi). Cached per node count.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;
    static const GaussHermite& get(int n);
};

// E_{Y ~ q^{theta_star}}[ f(Y) ]
double population_expectation(const PopulationSpec& spec, const std::function<double(double)>& f);

// F(theta, alpha) = E[ Y tanh(theta Y + atanh(2 alpha - 1)) ]
double big_f(const PopulationSpec& spec, double theta, double alpha);

// G(theta, alpha) = E[ sigmoid(2 theta Y + log(alpha/(1-alpha))) ]
double big_g(const PopulationSpec& spec, double theta, double alpha);

// The unique alpha in [0,1] with G(theta, alpha) = alpha_star, by bisection.
double tilted_alpha(const PopulationSpec& spec, double theta);

double sem_population_step(const PopulationSpec& spec, double theta);
double vem_population_step(const PopulationSpec& spec, double theta);

// Derivative of the expected log-likelihood in the overparameterized model:
// F(theta, alpha) - theta. Zeros are the stationary points / EM fixed points.
double population_nll_derivative(const PopulationSpec& spec, double theta, double alpha);

// Envelope derivative of the entropic loss: F(theta, alpha(theta)) - theta.
double population_entropic_loss_derivative(const PopulationSpec& spec, double theta);

struct PopulationLosses {
    double entropic;  // L(theta)
    double nll;       // l(theta)
};
PopulationLosses population_losses(const PopulationSpec& spec, double theta);

// Richardson-extrapolated central second difference.
double second_derivative(const std::function<double(double)>& f, double x, double h = 1e-4);

}  // namespace sinkem
