#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfgeo {

// Invalid or unknown configuration; the CLI maps this to exit code 2.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// The raw sample Z = (X, A, Y): covariates, integer treatment labels, outcomes.
struct ObservationBatch {
    Eigen::MatrixXd x;       // n x k
    Eigen::VectorXi a;       // n
    Eigen::MatrixXd y;       // n x d
    std::vector<int> labels; // declared treatment label set

    Eigen::Index n() const { return y.rows(); }
    Eigen::Index k() const { return x.cols(); }
    Eigen::Index d() const { return y.cols(); }

    // Throws std::invalid_argument on any invariant violation.
    void validate() const;

    std::vector<Eigen::Index> arm_indices(int arm) const;
};

// CSV with header x0,...,x{k-1},a,y0,...,y{d-1}.
void write_observations_csv(const ObservationBatch& batch, const std::string& path);
ObservationBatch read_observations_csv(const std::string& path);

}  // namespace cfgeo
