#pragma once

#include <Eigen/Dense>
#include <string>

#include "cfgeo/rng.hpp"

namespace cfgeo {

// Multiplier-bootstrap simultaneous band over a finite index set (grid
// points or test fields).
struct BandResult {
    Eigen::VectorXd center;
    Eigen::VectorXd sigma;    // per-point sigma_hat
    Eigen::VectorXd radius;   // c_hat * sigma / sqrt(n) + envelope
    double c_hat = 0.0;
    double alpha = 0.05;
    int multiplier_count = 0;
    double envelope = 0.0;    // inflation, 0 when uninflated

    Eigen::VectorXd lower() const { return center - radius; }
    Eigen::VectorXd upper() const { return center + radius; }

    // Simultaneous coverage event for a target curve.
    bool covers(const Eigen::VectorXd& target) const {
        return ((target - center).cwiseAbs().array() <= radius.array() + 1e-12).all();
    }

    std::string to_csv() const;
    std::string summary_json() const;
};

// Centered per-unit influence values, one column per index point. Multiplier
// draws depend only on (seed, B, n): replication b uses the substream
// ("multipliers", b), so nested index sets share coupled multipliers.
BandResult multiplier_band(const Eigen::MatrixXd& influence, const Eigen::VectorXd& center,
                           double alpha, int multiplier_count, const SeedPolicy& seed);

// Same construction over a test-field index set.
BandResult stein_band(const Eigen::MatrixXd& influence, const Eigen::VectorXd& center,
                      double alpha, int multiplier_count, const SeedPolicy& seed);

// Radius increased by exactly `envelope` at every point.
BandResult inflate_band(const BandResult& band, double envelope);

}  // namespace cfgeo
