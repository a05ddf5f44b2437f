#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace cfgeo {

// Compact axis-aligned evaluation region, optionally reached from ambient
// outcome space through a fixed linear projection.
struct EvaluationRegion {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    int grid_points_per_axis = 2;
    std::optional<Eigen::MatrixXd> projection;  // dim x d_ambient

    Eigen::Index dim() const { return lower.size(); }
    double volume() const { return (upper - lower).prod(); }

    void validate() const;

    // Applies the projection if present, otherwise the identity.
    Eigen::MatrixXd project(const Eigen::MatrixXd& ambient) const;
    Eigen::VectorXd project_point(const Eigen::VectorXd& ambient) const;
};

// Tensor-product midpoint grid with quadrature weights summing to the
// region volume.
struct Grid {
    Eigen::MatrixXd points;   // m x dim
    Eigen::VectorXd weights;  // m
    EvaluationRegion region;

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }

    // Cheap structural fingerprint used for wiring checks between
    // nuisances and estimators.
    std::uint64_t fingerprint() const;
};

Grid make_grid(const EvaluationRegion& region);

// Bounding box of the rows of `values`, expanded by `margin` per side
// (fraction of each axis range).
EvaluationRegion bounding_region(const Eigen::MatrixXd& values, int grid_points_per_axis,
                                 double margin = 0.10);

}  // namespace cfgeo
