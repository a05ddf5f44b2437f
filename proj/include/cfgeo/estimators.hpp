#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "cfgeo/batch.hpp"
#include "cfgeo/kernels.hpp"
#include "cfgeo/nuisance.hpp"
#include "cfgeo/region.hpp"

namespace cfgeo {

// Point estimates on an evaluation grid with per-point influence variance.
struct GridEstimate {
    std::uint64_t grid_fingerprint = 0;
    std::string kernel_id;
    Eigen::MatrixXd values;   // m x vdim (vdim = 1 for densities, d for scores)
    Eigen::MatrixXd sigma2;   // m x vdim: empirical influence variance
    Eigen::MatrixXd influence;  // n x (m*vdim): centered per-unit influence values

    int negative_values = 0;   // one-step density estimates may go negative
    int truncation_events = 0;
    int clip_events = 0;
    std::vector<std::string> point_flags;  // per grid point; empty means none

    Eigen::Index points() const { return values.rows(); }
    Eigen::Index vdim() const { return values.cols(); }

    std::string to_csv(const Grid& grid) const;
};

struct SteinEstimate {
    std::string g_id;
    double value = 0.0;
    double sigma2 = 0.0;            // variance of the mean: var(influence)/n
    Eigen::VectorXd influence;      // n, centered
};

// Smooth vector field with divergence, for Stein functionals.
struct TestField {
    std::string name;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
    std::function<double(const Eigen::VectorXd&)> divergence;
};

// The d coordinate Gaussian-bump fields e_j exp(-|y|^2/2) plus
// `extra_combinations` seeded random linear combinations of them.
std::vector<TestField> default_test_fields(Eigen::Index d, const SeedPolicy& seed,
                                           int extra_combinations = 4);

// One-step (cross-fitted influence function) estimate of the smoothed
// counterfactual density on the grid.
GridEstimate dis_estimate(const ObservationBatch& batch, int arm,
                          const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                          const Grid& grid, int workers = 1);

enum class PluginMode { IpwFree, Ipw };

// Plug-in estimators: treated-arm kernel average (IpwFree) or stabilized
// inverse propensity weighting (Ipw, requires propensity predictions).
GridEstimate plugin_estimate(const ObservationBatch& batch, int arm,
                             const Eigen::VectorXd* propensity, const SmoothingKernel& kernel,
                             const Grid& grid, PluginMode mode, int workers = 1);

// Ratio-of-one-steps score estimate with denominator truncation at `floor`
// (floor = -1 selects the default 1e-4 * max P_hat; other nonpositive values
// are rejected).
GridEstimate dss_estimate(const ObservationBatch& batch, int arm,
                          const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                          const Grid& grid, double floor = -1.0, int workers = 1);

// One-step estimate of Psi(g) = int_{Y0} {div g + g' s} P dy; linear in the
// (P, G) pair, so the per-unit influence value is the quadrature combination
// of the P and G influence values.
SteinEstimate stein_estimate(const ObservationBatch& batch, int arm,
                             const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                             const Grid& grid, const TestField& g, int workers = 1);

// Sanity-check baseline: arm units only, unit weights, no correction.
SteinEstimate treated_only_stein(const ObservationBatch& batch, int arm,
                                 const SmoothingKernel& kernel, const Grid& grid,
                                 const TestField& g, int workers = 1);

// Stabilized inverse-propensity-weighted reference density on the grid.
// Throws a contamination error when `working` is supplied and shares a row
// with the reference pool.
GridEstimate reference_proxy(const ObservationBatch& batch_ref, int arm,
                             const Eigen::VectorXd& propensity_ref, const SmoothingKernel& kernel,
                             const Grid& grid, const ObservationBatch* working = nullptr,
                             int workers = 1);

}  // namespace cfgeo
