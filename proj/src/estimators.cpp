#include "cfgeo/estimators.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfgeo/parallel.hpp"

namespace cfgeo {

namespace {

// Uncentered one-step influence values for the smoothed density (vdim = 1)
// or its gradient (vdim = d), laid out n x (m*vdim).
Eigen::MatrixXd one_step_influence(const ObservationBatch& batch, int arm,
                                   const CrossFitNuisance& nuisance,
                                   const SmoothingKernel& kernel, const Grid& grid,
                                   bool gradient, int workers) {
    const auto n = batch.n();
    const auto m = grid.size();
    const auto d = grid.dim();
    const auto vdim = gradient ? d : Eigen::Index{1};
    Eigen::MatrixXd phi(n, m * vdim);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        const bool in_arm = batch.a[i] == arm;
        const double w = in_arm ? 1.0 / nuisance.pi[i] : 0.0;
        const Eigen::VectorXd u = batch.y.row(i).transpose();
        for (Eigen::Index g = 0; g < m; ++g) {
            if (!gradient) {
                const double mu = nuisance.mu(i, g);
                const double k = in_arm ? kernel.eval(grid.points.row(g).transpose(), u) : 0.0;
                phi(i, g) = w * (k - mu) + mu;
            } else {
                const Eigen::VectorXd nu = nuisance.nu_at(i, g, d);
                Eigen::VectorXd k = Eigen::VectorXd::Zero(d);
                if (in_arm) k = kernel.grad(grid.points.row(g).transpose(), u);
                phi.row(i).segment(g * d, d) = (w * (k - nu) + nu).transpose();
            }
        }
    });
    return phi;
}

void summarize(GridEstimate& est, const Eigen::MatrixXd& phi_uncentered) {
    const auto n = phi_uncentered.rows();
    const Eigen::RowVectorXd means = phi_uncentered.colwise().mean();
    est.influence = phi_uncentered.rowwise() - means;
    const auto m = est.values.rows();
    const auto vdim = est.values.cols();
    est.sigma2.resize(m, vdim);
    for (Eigen::Index g = 0; g < m; ++g) {
        for (Eigen::Index j = 0; j < vdim; ++j) {
            est.values(g, j) = means[g * vdim + j];
            est.sigma2(g, j) =
                est.influence.col(g * vdim + j).squaredNorm() / static_cast<double>(n);
        }
    }
}

}  // namespace

std::string GridEstimate::to_csv(const Grid& grid) const {
    if (grid.size() != points()) throw std::invalid_argument("grid/estimate size mismatch");
    std::ostringstream out;
    out.precision(17);
    const auto dim = grid.dim();
    for (Eigen::Index j = 0; j < dim; ++j) out << "y" << j << ",";
    if (vdim() == 1) {
        out << "value,sigma2,flags\n";
    } else {
        for (Eigen::Index j = 0; j < vdim(); ++j) out << "value" << j << ",";
        for (Eigen::Index j = 0; j < vdim(); ++j) out << "sigma2" << j << ",";
        out << "flags\n";
    }
    for (Eigen::Index g = 0; g < points(); ++g) {
        for (Eigen::Index j = 0; j < dim; ++j) out << grid.points(g, j) << ",";
        for (Eigen::Index j = 0; j < vdim(); ++j) out << values(g, j) << ",";
        for (Eigen::Index j = 0; j < vdim(); ++j) out << sigma2(g, j) << ",";
        out << (g < static_cast<Eigen::Index>(point_flags.size()) ? point_flags[g] : "") << "\n";
    }
    return out.str();
}

std::vector<TestField> default_test_fields(Eigen::Index d, const SeedPolicy& seed,
                                           int extra_combinations) {
    std::vector<TestField> fields;
    for (Eigen::Index j = 0; j < d; ++j) {
        TestField f;
        f.name = "bump-e" + std::to_string(j);
        f.value = [j, d](const Eigen::VectorXd& y) {
            Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
            v[j] = std::exp(-0.5 * y.squaredNorm());
            return v;
        };
        f.divergence = [j](const Eigen::VectorXd& y) {
            return -y[j] * std::exp(-0.5 * y.squaredNorm());
        };
        fields.push_back(std::move(f));
    }
    for (int t = 0; t < extra_combinations; ++t) {
        Rng rng = seed.stream("test-fields", static_cast<std::uint64_t>(t));
        Eigen::VectorXd c(d);
        for (Eigen::Index j = 0; j < d; ++j) c[j] = rng.normal();
        c.normalize();
        TestField f;
        f.name = "bump-combo" + std::to_string(t);
        f.value = [c](const Eigen::VectorXd& y) {
            return Eigen::VectorXd(c * std::exp(-0.5 * y.squaredNorm()));
        };
        f.divergence = [c](const Eigen::VectorXd& y) {
            return -c.dot(y) * std::exp(-0.5 * y.squaredNorm());
        };
        fields.push_back(std::move(f));
    }
    return fields;
}

GridEstimate dis_estimate(const ObservationBatch& batch, int arm,
                          const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                          const Grid& grid, int workers) {
    batch.validate();
    if (nuisance.pi.size() != batch.n()) {
        throw std::invalid_argument("dis: nuisance does not match batch");
    }
    if (nuisance.grid_fingerprint != grid.fingerprint()) {
        throw std::invalid_argument("dis: nuisance was fitted on a different grid");
    }
    if (!nuisance.kernel_id.empty() && nuisance.kernel_id != kernel.id()) {
        throw std::invalid_argument("dis: nuisance was fitted with a different kernel");
    }
    GridEstimate est;
    est.grid_fingerprint = grid.fingerprint();
    est.kernel_id = kernel.id();
    est.clip_events = nuisance.clip_events;
    est.values.resize(grid.size(), 1);
    const Eigen::MatrixXd phi =
        one_step_influence(batch, arm, nuisance, kernel, grid, false, workers);
    summarize(est, phi);
    est.point_flags.assign(static_cast<std::size_t>(grid.size()), "");
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        if (est.values(g, 0) < 0.0) {
            ++est.negative_values;
            est.point_flags[static_cast<std::size_t>(g)] = "neg";
        }
    }
    return est;
}

GridEstimate plugin_estimate(const ObservationBatch& batch, int arm,
                             const Eigen::VectorXd* propensity, const SmoothingKernel& kernel,
                             const Grid& grid, PluginMode mode, int workers) {
    batch.validate();
    if (mode == PluginMode::Ipw && (!propensity || propensity->size() != batch.n())) {
        throw std::invalid_argument("plugin: IPW mode needs propensity predictions");
    }
    const auto n = batch.n();
    const auto m = grid.size();

    Eigen::VectorXd weights = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (batch.a[i] != arm) continue;
        weights[i] = mode == PluginMode::Ipw ? 1.0 / (*propensity)[i] : 1.0;
    }
    const double wsum = weights.sum();
    if (wsum <= 0.0) throw std::invalid_argument("plugin: no observations in arm");

    Eigen::MatrixXd phi(n, m);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        if (weights[i] == 0.0) {
            phi.row(i).setZero();
            return;
        }
        const Eigen::VectorXd u = batch.y.row(i).transpose();
        for (Eigen::Index g = 0; g < m; ++g) {
            phi(i, g) = static_cast<double>(n) / wsum * weights[i] *
                        kernel.eval(grid.points.row(g).transpose(), u);
        }
    });

    GridEstimate est;
    est.grid_fingerprint = grid.fingerprint();
    est.kernel_id = kernel.id();
    est.values.resize(m, 1);
    summarize(est, phi);
    est.point_flags.assign(static_cast<std::size_t>(m), "");
    return est;
}

GridEstimate dss_estimate(const ObservationBatch& batch, int arm,
                          const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                          const Grid& grid, double floor, int workers) {
    batch.validate();
    if (!nuisance.has_grad) throw std::invalid_argument("dss: nuisance lacks gradient fits");
    if (nuisance.grid_fingerprint != grid.fingerprint()) {
        throw std::invalid_argument("dss: nuisance was fitted on a different grid");
    }
    if (!nuisance.kernel_id.empty() && nuisance.kernel_id != kernel.id()) {
        throw std::invalid_argument("dss: nuisance was fitted with a different kernel");
    }
    const auto n = batch.n();
    const auto m = grid.size();
    const auto d = grid.dim();

    const Eigen::MatrixXd phi_p =
        one_step_influence(batch, arm, nuisance, kernel, grid, false, workers);
    const Eigen::MatrixXd phi_g =
        one_step_influence(batch, arm, nuisance, kernel, grid, true, workers);
    const Eigen::RowVectorXd p_hat = phi_p.colwise().mean();
    const Eigen::RowVectorXd g_hat = phi_g.colwise().mean();

    if (floor == -1.0) {
        floor = 1e-4 * p_hat.maxCoeff();
    } else if (floor <= 0.0) {
        throw ConfigError("dss: floor must be positive");
    }

    GridEstimate est;
    est.grid_fingerprint = grid.fingerprint();
    est.kernel_id = kernel.id();
    est.clip_events = nuisance.clip_events;
    est.values.resize(m, d);
    est.point_flags.assign(static_cast<std::size_t>(m), "");

    Eigen::MatrixXd phi_s(n, m * d);
    for (Eigen::Index g = 0; g < m; ++g) {
        const double p_trunc = std::max(p_hat[g], floor);
        if (p_hat[g] < floor) {
            ++est.truncation_events;
            est.point_flags[static_cast<std::size_t>(g)] = "trunc";
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            const double s = g_hat[g * d + j] / p_trunc;
            phi_s.col(g * d + j) = (phi_g.col(g * d + j) - s * phi_p.col(g)) / p_trunc;
        }
    }
    summarize(est, phi_s);
    // summarize() overwrote values with the influence means; the truncated
    // ratio is the reported point estimate.
    for (Eigen::Index g = 0; g < m; ++g) {
        const double p_trunc = std::max(p_hat[g], floor);
        for (Eigen::Index j = 0; j < d; ++j) est.values(g, j) = g_hat[g * d + j] / p_trunc;
    }
    return est;
}

SteinEstimate stein_estimate(const ObservationBatch& batch, int arm,
                             const CrossFitNuisance& nuisance, const SmoothingKernel& kernel,
                             const Grid& grid, const TestField& g, int workers) {
    batch.validate();
    if (!nuisance.has_grad) throw std::invalid_argument("stein: nuisance lacks gradient fits");
    const auto n = batch.n();
    const auto m = grid.size();
    const auto d = grid.dim();

    const Eigen::MatrixXd phi_p =
        one_step_influence(batch, arm, nuisance, kernel, grid, false, workers);
    const Eigen::MatrixXd phi_g =
        one_step_influence(batch, arm, nuisance, kernel, grid, true, workers);

    Eigen::VectorXd div_w(m);
    Eigen::MatrixXd gval(m, d);
    for (Eigen::Index p = 0; p < m; ++p) {
        const Eigen::VectorXd y = grid.points.row(p).transpose();
        div_w[p] = grid.weights[p] * g.divergence(y);
        gval.row(p) = grid.weights[p] * g.value(y).transpose();
    }

    Eigen::VectorXd phi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double acc = 0.0;
        for (Eigen::Index p = 0; p < m; ++p) {
            acc += div_w[p] * phi_p(i, p) + gval.row(p).dot(phi_g.row(i).segment(p * d, d));
        }
        phi[i] = acc;
    }

    SteinEstimate est;
    est.g_id = g.name;
    est.value = phi.mean();
    est.influence = phi.array() - est.value;
    est.sigma2 = est.influence.squaredNorm() / static_cast<double>(n) / static_cast<double>(n);
    return est;
}

SteinEstimate treated_only_stein(const ObservationBatch& batch, int arm,
                                 const SmoothingKernel& kernel, const Grid& grid,
                                 const TestField& g, int workers) {
    batch.validate();
    const auto n = batch.n();
    const auto m = grid.size();
    const auto arm_idx = batch.arm_indices(arm);
    if (arm_idx.empty()) throw std::invalid_argument("stein: no observations in arm");
    const double scale = static_cast<double>(n) / static_cast<double>(arm_idx.size());

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
    parallel_for(arm_idx.size(), workers, [&](std::size_t r) {
        const auto i = arm_idx[r];
        const Eigen::VectorXd u = batch.y.row(i).transpose();
        double acc = 0.0;
        for (Eigen::Index p = 0; p < m; ++p) {
            const Eigen::VectorXd y = grid.points.row(p).transpose();
            acc += grid.weights[p] * (g.divergence(y) * kernel.eval(y, u) +
                                      g.value(y).dot(kernel.grad(y, u)));
        }
        phi[i] = scale * acc;
    });

    SteinEstimate est;
    est.g_id = g.name;
    est.value = phi.mean();
    est.influence = phi.array() - est.value;
    est.sigma2 = est.influence.squaredNorm() / static_cast<double>(n) / static_cast<double>(n);
    return est;
}

GridEstimate reference_proxy(const ObservationBatch& batch_ref, int arm,
                             const Eigen::VectorXd& propensity_ref, const SmoothingKernel& kernel,
                             const Grid& grid, const ObservationBatch* working, int workers) {
    if (working) {
        for (Eigen::Index i = 0; i < batch_ref.n(); ++i) {
            for (Eigen::Index j = 0; j < working->n(); ++j) {
                if (batch_ref.a[i] == working->a[j] && batch_ref.x.row(i) == working->x.row(j) &&
                    batch_ref.y.row(i) == working->y.row(j)) {
                    throw std::invalid_argument(
                        "reference_proxy: reference pool is contaminated by a working row");
                }
            }
        }
    }
    return plugin_estimate(batch_ref, arm, &propensity_ref, kernel, grid, PluginMode::Ipw,
                           workers);
}

}  // namespace cfgeo
