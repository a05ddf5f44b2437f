#include "cfgeo/inference.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cfgeo {

std::string BandResult::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "point_id,center,sigma,radius,lower,upper\n";
    for (Eigen::Index g = 0; g < center.size(); ++g) {
        out << g << "," << center[g] << "," << sigma[g] << "," << radius[g] << ","
            << center[g] - radius[g] << "," << center[g] + radius[g] << "\n";
    }
    return out.str();
}

std::string BandResult::summary_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["B"] = multiplier_count;
    j["c_hat"] = c_hat;
    j["envelope"] = envelope;
    return j.dump();
}

BandResult multiplier_band(const Eigen::MatrixXd& influence, const Eigen::VectorXd& center,
                           double alpha, int multiplier_count, const SeedPolicy& seed) {
    const auto n = influence.rows();
    const auto m = influence.cols();
    if (center.size() != m) throw std::invalid_argument("band: center/influence size mismatch");
    if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("band: alpha outside (0,1)");
    if (multiplier_count < 1) throw std::invalid_argument("band: need at least one replication");
    if (n < 2) throw std::invalid_argument("band: need at least two units");

    Eigen::VectorXd sigma(m);
    for (Eigen::Index g = 0; g < m; ++g) {
        sigma[g] = std::sqrt(influence.col(g).squaredNorm() / static_cast<double>(n));
        const double mean = influence.col(g).mean();
        if (std::abs(mean) > 1e-10 * std::max(1.0, sigma[g])) {
            throw std::invalid_argument("band: influence values are not centered at point " +
                                        std::to_string(g));
        }
    }
    const double floor = 1e-12 + 1e-6 * sigma.maxCoeff();
    for (Eigen::Index g = 0; g < m; ++g) {
        if (sigma[g] < floor) {
            throw std::invalid_argument("band: degenerate variance at point " +
                                        std::to_string(g));
        }
    }

    const double root_n = std::sqrt(static_cast<double>(n));
    std::vector<double> stats(static_cast<std::size_t>(multiplier_count));
    Eigen::VectorXd xi(n);
    for (int b = 0; b < multiplier_count; ++b) {
        Rng rng = seed.stream("multipliers", static_cast<std::uint64_t>(b));
        for (Eigen::Index i = 0; i < n; ++i) xi[i] = rng.normal();
        const Eigen::VectorXd z = influence.transpose() * xi / root_n;
        double sup = 0.0;
        for (Eigen::Index g = 0; g < m; ++g) {
            if (sigma[g] > 0.0) sup = std::max(sup, std::abs(z[g]) / sigma[g]);
        }
        stats[static_cast<std::size_t>(b)] = sup;
    }
    std::sort(stats.begin(), stats.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil((1.0 - alpha) * (multiplier_count + 1)));
    const auto idx = std::min(rank, static_cast<std::size_t>(multiplier_count)) - 1;

    BandResult band;
    band.center = center;
    band.sigma = sigma;
    band.alpha = alpha;
    band.multiplier_count = multiplier_count;
    band.c_hat = stats[idx];
    band.radius = band.c_hat * sigma / root_n;
    return band;
}

BandResult stein_band(const Eigen::MatrixXd& influence, const Eigen::VectorXd& center,
                      double alpha, int multiplier_count, const SeedPolicy& seed) {
    return multiplier_band(influence, center, alpha, multiplier_count, seed);
}

BandResult inflate_band(const BandResult& band, double envelope) {
    if (envelope < 0.0) throw std::invalid_argument("band: envelope must be nonnegative");
    BandResult out = band;
    out.envelope = band.envelope + envelope;
    out.radius = band.radius.array() + envelope;
    return out;
}

}  // namespace cfgeo
