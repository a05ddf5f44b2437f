#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cfgeo/batch.hpp"
#include "cfgeo/crossfit.hpp"
#include "cfgeo/kernels.hpp"
#include "cfgeo/region.hpp"

namespace cfgeo {

// Logistic model for P(A = a | X = x), fitted by IRLS, predictions clipped
// below at `clip`.
struct PropensityModel {
    Eigen::VectorXd coef;  // intercept + slopes
    double clip = 0.0;
    bool converged = true;

    double predict(const Eigen::VectorXd& x) const;
};

struct PropensityFit {
    std::vector<PropensityModel> per_fold;
    Eigen::VectorXd heldout;  // held-out prediction per unit
    int clip_events = 0;
};

PropensityFit fit_propensity(const ObservationBatch& batch, int arm, const CrossFitPlan& plan,
                             double clip);

struct NuisanceOptions {
    double ridge = -1.0;   // < 0 selects the default 1e-6 * n
    bool with_grad = false;
    double clip = 0.01;    // propensity clip floor
};

// Cross-fitted nuisances for one (arm, kernel, grid) triple. Held-out
// predictions are stored per unit and grid point; the model applied to
// unit i was trained without fold(i).
struct CrossFitNuisance {
    int arm = 0;
    std::string kernel_id;
    std::uint64_t grid_fingerprint = 0;
    CrossFitPlan plan;

    Eigen::VectorXd pi;  // n: held-out propensity predictions
    Eigen::MatrixXd mu;  // n x m: held-out mu_hat(x_i; y_g)
    Eigen::MatrixXd nu;  // n x (m*d): gradient regressions, row-major per point
    bool has_grad = false;
    bool oracle = false;

    int clip_events = 0;

    // Per-fold coefficients, for inspection/export; empty on the oracle path.
    std::vector<Eigen::VectorXd> propensity_coef;            // folds
    std::vector<Eigen::MatrixXd> mu_coef;                    // folds x ((k+1) x m)

    Eigen::VectorXd nu_at(Eigen::Index unit, Eigen::Index point, Eigen::Index d) const {
        return nu.row(unit).segment(point * d, d).transpose();
    }

    std::string to_json(std::size_t max_scalars = 10'000'000) const;
};

CrossFitNuisance fit_localized_regressions(const ObservationBatch& batch, int arm,
                                           const CrossFitPlan& plan, const SmoothingKernel& kernel,
                                           const Grid& grid, const NuisanceOptions& options = {},
                                           int workers = 1);

// Exact-DGP nuisances: pi from the data-generating process, mu (and nu) by
// conditional Monte Carlo per (x, grid point) with `mc_count` draws; a
// closed-form path is used when the caller can supply exact values.
struct ConditionalOracle {
    // Exact propensity pi_a(x).
    std::function<double(const Eigen::VectorXd& x)> propensity;
    // Sampler for the conditional law of the (projected) outcome given X = x, A = a.
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x, Rng& rng)> sample_outcome;
    // Optional exact mu(x; y); used instead of Monte Carlo when set.
    std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& y)> exact_mu;
    // Optional exact nu(x; y).
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& y)> exact_nu;
};

CrossFitNuisance oracle_nuisance(const ConditionalOracle& oracle, const ObservationBatch& batch,
                                 int arm, const SmoothingKernel& kernel, const Grid& grid,
                                 bool with_grad, Eigen::Index mc_count, const SeedPolicy& seed,
                                 int workers = 1);

// Controlled nuisance perturbation for remainder experiments: the propensity
// is tilted by eps on the logit scale and mu is shifted by eps (constant).
CrossFitNuisance perturb_nuisance(const CrossFitNuisance& base, double eps_pi, double eps_mu,
                                  double clip = 1e-3);

}  // namespace cfgeo
