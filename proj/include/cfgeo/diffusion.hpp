#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <cmath>

namespace cfgeo {

// Variance-preserving forward diffusion dZ_t = -0.5 beta Z_t dt + sqrt(beta) dW_t
// on [0,1], with a configurable power linking spatial scale h to diffusion
// time eps_h = h^eps_power.
struct ForwardDiffusionSpec {
    double rate = 1.0;        // constant beta(t)
    double eps_power = 2.0;   // eps_h = h^eps_power

    double beta(double /*t*/) const { return rate; }
    double sigma(double t) const { return std::sqrt(beta(t)); }

    // Mean-decay factor alpha_t = exp(-0.5 * int_0^t beta).
    double alpha(double t) const { return std::exp(-0.5 * rate * t); }

    double eps_of_h(double h) const {
        if (h <= 0.0) throw std::invalid_argument("diffusion: h must be positive");
        const double eps = std::pow(h, eps_power);
        if (eps > 1.0) throw std::invalid_argument("diffusion: eps_h exceeds 1, h too large");
        return eps;
    }
};

struct GaussianTransition {
    Eigen::VectorXd mean;
    double variance = 0.0;  // isotropic: covariance = variance * I

    double log_density(const Eigen::VectorXd& v) const {
        const double d = static_cast<double>(mean.size());
        return -0.5 * (v - mean).squaredNorm() / variance
               - 0.5 * d * std::log(2.0 * M_PI * variance);
    }
};

// Closed-form VP transition q_eps(.|u) = N(alpha_eps u, (1 - alpha_eps^2) I).
GaussianTransition forward_transition(const ForwardDiffusionSpec& spec, double eps,
                                      const Eigen::VectorXd& u);

}  // namespace cfgeo
