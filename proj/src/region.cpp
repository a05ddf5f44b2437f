#include "cfgeo/region.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cfgeo {

void EvaluationRegion::validate() const {
    if (lower.size() != upper.size() || lower.size() < 1) {
        throw std::invalid_argument("region: lower/upper size mismatch");
    }
    if (dim() > 3) {
        throw std::invalid_argument("region: evaluation dimension capped at 3");
    }
    if (((upper - lower).array() <= 0.0).any()) {
        throw std::invalid_argument("region: lower must be strictly below upper");
    }
    if (grid_points_per_axis < 2) {
        throw std::invalid_argument("region: grid_points_per_axis must be at least 2");
    }
    if (projection && projection->rows() != dim()) {
        throw std::invalid_argument("region: projection row count must equal dim");
    }
}

Eigen::MatrixXd EvaluationRegion::project(const Eigen::MatrixXd& ambient) const {
    if (!projection) return ambient;
    return ambient * projection->transpose();
}

Eigen::VectorXd EvaluationRegion::project_point(const Eigen::VectorXd& ambient) const {
    if (!projection) return ambient;
    return (*projection) * ambient;
}

std::uint64_t Grid::fingerprint() const {
    // FNV-1a over the raw point/weight bytes.
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const double* data, std::size_t count) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < count * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    mix(points.data(), static_cast<std::size_t>(points.size()));
    mix(weights.data(), static_cast<std::size_t>(weights.size()));
    return h;
}

Grid make_grid(const EvaluationRegion& region) {
    region.validate();
    const auto dim = region.dim();
    const int per_axis = region.grid_points_per_axis;
    Eigen::Index total = 1;
    for (Eigen::Index j = 0; j < dim; ++j) total *= per_axis;

    const Eigen::VectorXd step = (region.upper - region.lower) / per_axis;
    const double cell_weight = step.prod();

    Grid grid;
    grid.region = region;
    grid.points.resize(total, dim);
    grid.weights = Eigen::VectorXd::Constant(total, cell_weight);
    for (Eigen::Index idx = 0; idx < total; ++idx) {
        Eigen::Index rem = idx;
        for (Eigen::Index j = 0; j < dim; ++j) {
            const auto cell = rem % per_axis;
            rem /= per_axis;
            grid.points(idx, j) = region.lower[j] + (static_cast<double>(cell) + 0.5) * step[j];
        }
    }
    return grid;
}

EvaluationRegion bounding_region(const Eigen::MatrixXd& values, int grid_points_per_axis,
                                 double margin) {
    if (values.rows() < 1) throw std::invalid_argument("bounding_region: empty input");
    EvaluationRegion region;
    region.lower = values.colwise().minCoeff();
    region.upper = values.colwise().maxCoeff();
    const Eigen::VectorXd pad = margin * (region.upper - region.lower);
    region.lower -= pad;
    region.upper += pad;
    region.grid_points_per_axis = grid_points_per_axis;
    region.validate();
    return region;
}

}  // namespace cfgeo
