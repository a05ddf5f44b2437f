#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfgeo/batch.hpp"
#include "cfgeo/estimators.hpp"
#include "cfgeo/inference.hpp"
#include "cfgeo/kernels.hpp"
#include "cfgeo/mixture.hpp"
#include "cfgeo/region.hpp"

namespace cfgeo {

// One mixture component of the conditional outcome law: mean depends
// affinely on the covariates, covariance is diagonal with per-axis scales.
struct DgpComponent {
    double weight = 1.0;
    Eigen::VectorXd base_mean;     // d
    Eigen::MatrixXd loading;       // d x k, mean = base_mean + loading * x
    Eigen::VectorXd noise_scale;   // d, per-axis standard deviation
};

// Synthetic confounded data-generating process with controllable intrinsic
// dimension: X ~ N(0, I_k), A | X ~ Bernoulli(logistic), Y | X, A = a from
// the arm's mixture.
struct SyntheticDGP {
    std::string name;
    int d = 2;
    int d_star = 2;
    int k = 2;
    Eigen::VectorXd logit_coef;                    // k+1: intercept + slopes for P(A=1|X)
    std::map<int, std::vector<DgpComponent>> arms;
    double declared_pi_min = 0.05;
    Eigen::MatrixXd projection;                    // r_proj x d; empty = identity

    double propensity(int arm, const Eigen::VectorXd& x) const;

    // Conditional law of Y given X = x under arm a.
    GaussianMixtureLaw conditional_law(int arm, const Eigen::VectorXd& x) const;

    // Marginal counterfactual law P_a over X ~ N(0, I_k); exact mixture
    // since component means are affine in x.
    GaussianMixtureLaw counterfactual_law(int arm) const;

    // Counterfactual law of the projected outcome P * Y^a.
    GaussianMixtureLaw projected_counterfactual_law(int arm, const Eigen::MatrixXd& proj) const;

    // Monte-Carlo positivity audit: min over draws of min_a pi_a(X).
    double positivity_audit(Eigen::Index draws, const SeedPolicy& seed) const;
};

SyntheticDGP dgp_preset(const std::string& name);
std::vector<std::string> dgp_preset_names();

ObservationBatch generate(const SyntheticDGP& dgp, Eigen::Index n, const SeedPolicy& seed);

// Counterfactual law in evaluation coordinates (after the DGP projection,
// when one is declared).
GaussianMixtureLaw evaluation_law(const SyntheticDGP& dgp, int arm);

// Batch with outcomes mapped to evaluation coordinates.
ObservationBatch project_outcomes(const SyntheticDGP& dgp, const ObservationBatch& batch);

// Exact-DGP conditional oracle for the given kernel; mu/nu are closed-form
// Gaussian convolutions for Gaussian-family kernels and flow-based for
// transported kernels. The kernel must outlive the returned oracle.
ConditionalOracle make_dgp_oracle(const SyntheticDGP& dgp, int arm, const SmoothingKernel& kernel);

// Population smoothed density p_{a,h}(y) = E{kappa(y | Y^a)} on the grid.
// Closed-form Gaussian convolution for Gaussian-family kernels; for
// transported kernels the u-integral is exact per grid point because the
// forward transition is Gaussian in u.
Eigen::VectorXd population_density(const SyntheticDGP& dgp, int arm, const SmoothingKernel& kernel,
                                   const Grid& grid);

// Same, for an explicit counterfactual mixture in evaluation coordinates.
Eigen::VectorXd population_density(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                   const Grid& grid);

Eigen::MatrixXd population_gradient(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                    const Grid& grid);

// Population smoothed score s = g / p on the grid, one row per point.
Eigen::MatrixXd population_score(const SyntheticDGP& dgp, int arm, const SmoothingKernel& kernel,
                                 const Grid& grid);
Eigen::MatrixXd population_score(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                 const Grid& grid);

// Population Stein functional Psi(g) = int {div g * P + g' G} dy by grid quadrature.
double population_stein(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                        const Grid& grid, const TestField& g);

// Integrated squared error by quadrature; refuses mismatched grids.
double ise(const Eigen::VectorXd& estimate, const Eigen::VectorXd& target, const Grid& grid);
double ise(const GridEstimate& estimate, const Eigen::VectorXd& target, const Grid& grid);

struct RateCurve {
    std::vector<double> n;
    std::vector<double> error;
    std::vector<double> error_se;
    double slope = 0.0;
    double slope_se = 0.0;
    double intercept = 0.0;
};

// Least-squares slope of log error on log n (>= 3 points, errors > 0).
RateCurve rate_slope(const std::vector<double>& n, const std::vector<double>& error,
                     const std::vector<double>& error_se = {});

struct DriftReport {
    std::vector<double> h;
    std::vector<double> eps;
    Eigen::MatrixXd drift;   // |h| x |eps|: integrated L2 kernel drift
    double h_exponent = 0.0;   // coefficient of log(1/h), ~ d_geom/2 + gamma
    double eps_exponent = 0.0; // coefficient of log eps, ~ 1

    std::string to_csv() const;
};

// Kernel drift sqrt(E int_{Y0} (kappa_eps - kappa_0)^2 dy) per (h, eps),
// with exponents fitted jointly by least squares in log space.
using PerturbedKernelFactory =
    std::function<std::unique_ptr<SmoothingKernel>(double h, double eps)>;

DriftReport drift_diagnostic(const PerturbedKernelFactory& factory,
                             const std::vector<double>& h_values,
                             const std::vector<double>& eps_values,
                             const Eigen::MatrixXd& law_samples, const Grid& grid,
                             int workers = 1);

// End-to-end experiment runner; config documented in the README. Writes
// curves.csv / bands.csv / peakiness.csv / drift.csv, SVG plots, and
// manifest.json into out_dir. Returns the manifest JSON.
std::string run_experiment(const std::string& config_json, const std::string& out_dir,
                           int workers = 1);

}  // namespace cfgeo
