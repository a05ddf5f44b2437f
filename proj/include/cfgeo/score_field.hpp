#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>

#include "cfgeo/batch.hpp"
#include "cfgeo/diffusion.hpp"
#include "cfgeo/mixture.hpp"

namespace cfgeo {

// Evaluable diffusion score field s(z, t). Evaluation is pure and reentrant.
class ScoreField {
public:
    virtual ~ScoreField() = default;

    virtual Eigen::VectorXd eval(const Eigen::VectorXd& z, double t) const = 0;

    // Spatial Jacobian of the field when an analytic form exists.
    virtual bool has_jacobian() const { return false; }
    virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& z, double t) const;

    virtual std::string kind() const = 0;

    // Non-null when the field is the exact score of a diffused mixture;
    // enables closed-form flow paths for single-Gaussian geometry.
    virtual const GaussianMixtureLaw* exact_mixture() const { return nullptr; }
};

// Exact score of the VP-diffused mixture: s(z,t) = grad log p_{theta0,t}(z).
class MixtureScoreField final : public ScoreField {
public:
    MixtureScoreField(GaussianMixtureLaw law, ForwardDiffusionSpec spec);

    Eigen::VectorXd eval(const Eigen::VectorXd& z, double t) const override;
    bool has_jacobian() const override { return true; }
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& z, double t) const override;
    std::string kind() const override { return "exact-mixture"; }
    const GaussianMixtureLaw* exact_mixture() const override { return &law_; }

    const ForwardDiffusionSpec& spec() const { return spec_; }

private:
    // Per-component eigenstructure cached at construction; the diffused
    // covariance at time t shares the eigenvectors (V (a^2 D + (1-a^2) I) V'),
    // so score and jacobian evaluate without refactorizing per call.
    struct ComponentCache {
        double log_weight;
        Eigen::VectorXd mean;
        Eigen::MatrixXd vecs;
        Eigen::VectorXd vals;
    };

    GaussianMixtureLaw law_;
    ForwardDiffusionSpec spec_;
    std::vector<ComponentCache> comps_;
};

enum class PerturbMode { LinearTilt, Rotation };

// Base field plus a smooth perturbation with sup-norm proportional to eps
// (exactly eps for the linear tilt); eps = 0 returns the base values exactly.
class PerturbedScoreField final : public ScoreField {
public:
    PerturbedScoreField(std::shared_ptr<const ScoreField> base, double eps, PerturbMode mode,
                        Eigen::Index dim);

    Eigen::VectorXd eval(const Eigen::VectorXd& z, double t) const override;
    bool has_jacobian() const override;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& z, double t) const override;
    std::string kind() const override { return "perturbed"; }

    double eps() const { return eps_; }

private:
    std::shared_ptr<const ScoreField> base_;
    double eps_;
    PerturbMode mode_;
    Eigen::VectorXd tilt_;      // unit direction, LinearTilt
    Eigen::MatrixXd rotation_;  // skew-symmetric generator, Rotation
};

std::shared_ptr<const ScoreField> perturb_score(std::shared_ptr<const ScoreField> base,
                                                double eps, PerturbMode mode,
                                                Eigen::Index dim);

// Neighborhood-PCA local geometry proxy: empirical covariance of the k_nn
// nearest arm outcomes to `anchor`, plus ridge * I. Brute-force search.
Eigen::MatrixXd fit_pca_proxy(const ObservationBatch& batch, int arm,
                              const Eigen::VectorXd& anchor, int k_nn, double ridge);

// Same, on an already-projected outcome matrix restricted to one arm.
Eigen::MatrixXd fit_pca_proxy(const Eigen::MatrixXd& arm_outcomes,
                              const Eigen::VectorXd& anchor, int k_nn, double ridge);

// Scale-free default ridge: 1e-3 * trace(cov) / d.
double default_pca_ridge(const Eigen::MatrixXd& covariance);

}  // namespace cfgeo
