#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cfgeo/diffusion.hpp"
#include "cfgeo/rng.hpp"

namespace cfgeo {

struct GaussianComponent {
    double weight = 1.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

// Finite Gaussian mixture with full covariances; the geometry reference law
// for exact-score experiments and the building block of synthetic DGPs.
struct GaussianMixtureLaw {
    std::vector<GaussianComponent> components;

    Eigen::Index dim() const {
        return components.empty() ? 0 : components.front().mean.size();
    }

    void validate() const;

    double log_density(const Eigen::VectorXd& z) const;
    double density(const Eigen::VectorXd& z) const;

    // grad_z log density, log-sum-exp stabilized.
    Eigen::VectorXd score(const Eigen::VectorXd& z) const;

    // Jacobian of the score, d x d (analytic).
    Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& z) const;

    Eigen::VectorXd sample(Rng& rng) const;
    Eigen::MatrixXd sample(Rng& rng, Eigen::Index count) const;

    // Marginal moments of the mixture.
    Eigen::VectorXd mean() const;
    Eigen::MatrixXd covariance() const;

    static GaussianMixtureLaw standard_normal(Eigen::Index d);
    static GaussianMixtureLaw single(const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& covariance);
};

// Exact time-t marginal of the VP diffusion started at `law`:
// (w, m, S) -> (w, a_t m, a_t^2 S + (1 - a_t^2) I).
GaussianMixtureLaw diffused_mixture(const GaussianMixtureLaw& law, double t,
                                    const ForwardDiffusionSpec& spec);

Eigen::VectorXd mixture_score(const GaussianMixtureLaw& law, const Eigen::VectorXd& z);

std::string mixture_to_json(const GaussianMixtureLaw& law);
GaussianMixtureLaw mixture_from_json(const std::string& text);

}  // namespace cfgeo
