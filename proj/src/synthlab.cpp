#include "cfgeo/synthlab.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfgeo/parallel.hpp"

namespace cfgeo {

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double gaussian_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                        const Eigen::MatrixXd& cov) {
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("oracle: covariance not positive definite");
    }
    double log_det = 0.0;
    for (Eigen::Index j = 0; j < cov.rows(); ++j) log_det += 2.0 * std::log(llt.matrixL()(j, j));
    const Eigen::VectorXd w = llt.matrixL().solve(y - mean);
    const double d = static_cast<double>(y.size());
    return std::exp(-0.5 * (d * std::log(2.0 * M_PI) + log_det + w.squaredNorm()));
}

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

OlsFit ols_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    OlsFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (n > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            rss += r * r;
        }
        fit.slope_se = std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx);
    }
    return fit;
}

// Covariance of a Gaussian-family kernel at evaluation point y, when one
// exists in closed form.
bool kernel_covariance_at(const SmoothingKernel& kernel, const Eigen::VectorXd& y,
                          Eigen::MatrixXd* out) {
    if (const auto* iso = dynamic_cast<const IsotropicGaussianKernel*>(&kernel)) {
        *out = iso->scale() * iso->scale() *
               Eigen::MatrixXd::Identity(kernel.dim(), kernel.dim());
        return true;
    }
    if (const auto* aniso = dynamic_cast<const AnisotropicGaussianKernel*>(&kernel)) {
        *out = aniso->covariance();
        return true;
    }
    if (const auto* local = dynamic_cast<const LocalGeometryKernel*>(&kernel)) {
        *out = local->local(y).covariance();
        return true;
    }
    return false;
}

double transported_density_at(const GaussianMixtureLaw& law, const TransportedKernel& kernel,
                              const Eigen::VectorXd& y) {
    const FlowResult flow = reverse_flow(kernel.spec(), kernel.score(), kernel.eps(), y,
                                         FlowDirection::CleanToNoisy, kernel.steps());
    const double a = kernel.spec().alpha(kernel.eps());
    const auto d = y.size();
    double acc = 0.0;
    for (const auto& c : law.components) {
        const Eigen::MatrixXd cov =
            (1.0 - a * a) * Eigen::MatrixXd::Identity(d, d) + a * a * c.covariance;
        acc += c.weight * gaussian_density(flow.endpoint, a * c.mean, cov);
    }
    return std::exp(flow.log_jacobian) * acc;
}

double population_density_at(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                             const Eigen::VectorXd& y) {
    Eigen::MatrixXd sigma_ker;
    if (kernel_covariance_at(kernel, y, &sigma_ker)) {
        double acc = 0.0;
        for (const auto& c : law.components) {
            acc += c.weight * gaussian_density(y, c.mean, c.covariance + sigma_ker);
        }
        return acc;
    }
    if (const auto* transported = dynamic_cast<const TransportedKernel*>(&kernel)) {
        return transported_density_at(law, *transported, y);
    }
    throw std::invalid_argument("oracle unavailable for kernel " + kernel.id());
}

Eigen::VectorXd population_gradient_at(const GaussianMixtureLaw& law,
                                       const SmoothingKernel& kernel, const Eigen::VectorXd& y) {
    Eigen::MatrixXd sigma_ker;
    if (kernel_covariance_at(kernel, y, &sigma_ker)) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(y.size());
        for (const auto& c : law.components) {
            const Eigen::MatrixXd cov = c.covariance + sigma_ker;
            const double dens = gaussian_density(y, c.mean, cov);
            acc += c.weight * dens * cov.llt().solve(c.mean - y);
        }
        return acc;
    }
    // Central finite difference of the flow-based density.
    const double step = 1e-4 * std::max(kernel.scale(), 1e-3);
    Eigen::VectorXd g(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        Eigen::VectorXd hi = y, lo = y;
        hi[j] += step;
        lo[j] -= step;
        g[j] = (population_density_at(law, kernel, hi) - population_density_at(law, kernel, lo)) /
               (2.0 * step);
    }
    return g;
}

}  // namespace

double SyntheticDGP::propensity(int arm, const Eigen::VectorXd& x) const {
    const double p1 = sigmoid(logit_coef[0] + logit_coef.tail(k).dot(x));
    return arm == 1 ? p1 : 1.0 - p1;
}

GaussianMixtureLaw SyntheticDGP::conditional_law(int arm, const Eigen::VectorXd& x) const {
    const auto it = arms.find(arm);
    if (it == arms.end()) throw std::invalid_argument("dgp: unknown arm");
    GaussianMixtureLaw law;
    for (const auto& comp : it->second) {
        GaussianComponent c;
        c.weight = comp.weight;
        c.mean = comp.base_mean + comp.loading * x;
        c.covariance = comp.noise_scale.array().square().matrix().asDiagonal();
        law.components.push_back(std::move(c));
    }
    return law;
}

GaussianMixtureLaw SyntheticDGP::counterfactual_law(int arm) const {
    const auto it = arms.find(arm);
    if (it == arms.end()) throw std::invalid_argument("dgp: unknown arm");
    GaussianMixtureLaw law;
    for (const auto& comp : it->second) {
        GaussianComponent c;
        c.weight = comp.weight;
        c.mean = comp.base_mean;
        c.covariance = Eigen::MatrixXd(comp.noise_scale.array().square().matrix().asDiagonal()) +
                       comp.loading * comp.loading.transpose();
        law.components.push_back(std::move(c));
    }
    return law;
}

GaussianMixtureLaw SyntheticDGP::projected_counterfactual_law(int arm,
                                                              const Eigen::MatrixXd& proj) const {
    const GaussianMixtureLaw ambient = counterfactual_law(arm);
    GaussianMixtureLaw law;
    for (const auto& c : ambient.components) {
        law.components.push_back(
            {c.weight, proj * c.mean, proj * c.covariance * proj.transpose()});
    }
    return law;
}

double SyntheticDGP::positivity_audit(Eigen::Index draws, const SeedPolicy& seed) const {
    Rng rng = seed.stream("positivity");
    double lo = 1.0;
    Eigen::VectorXd x(k);
    for (Eigen::Index i = 0; i < draws; ++i) {
        for (int j = 0; j < k; ++j) x[j] = rng.normal();
        const double p1 = propensity(1, x);
        lo = std::min(lo, std::min(p1, 1.0 - p1));
    }
    return lo;
}

SyntheticDGP dgp_preset(const std::string& name) {
    SyntheticDGP dgp;
    dgp.name = name;
    if (name == "gauss2d") {
        dgp.d = 2;
        dgp.d_star = 2;
        dgp.k = 2;
        dgp.logit_coef = Eigen::Vector3d(0.2, 0.4, -0.3);
        dgp.declared_pi_min = 0.05;
        DgpComponent c1;
        c1.weight = 1.0;
        c1.base_mean = Eigen::Vector2d(0.5, -0.3);
        c1.loading = (Eigen::Matrix2d() << 0.6, 0.1, 0.0, 0.5).finished();
        c1.noise_scale = Eigen::Vector2d(0.7, 0.7);
        DgpComponent c0;
        c0.weight = 1.0;
        c0.base_mean = Eigen::Vector2d(-0.5, 0.3);
        c0.loading = (Eigen::Matrix2d() << 0.4, 0.0, 0.1, 0.5).finished();
        c0.noise_scale = Eigen::Vector2d(0.8, 0.8);
        dgp.arms[1] = {c1};
        dgp.arms[0] = {c0};
    } else if (name == "mix1d") {
        dgp.d = 1;
        dgp.d_star = 1;
        dgp.k = 1;
        dgp.logit_coef = Eigen::Vector2d(0.0, 0.4);
        dgp.declared_pi_min = 0.05;
        DgpComponent a;
        a.weight = 0.5;
        a.base_mean = Eigen::VectorXd::Constant(1, -1.2);
        a.loading = Eigen::MatrixXd::Constant(1, 1, 0.5);
        a.noise_scale = Eigen::VectorXd::Constant(1, 0.5);
        DgpComponent b;
        b.weight = 0.5;
        b.base_mean = Eigen::VectorXd::Constant(1, 1.2);
        b.loading = Eigen::MatrixXd::Constant(1, 1, 0.3);
        b.noise_scale = Eigen::VectorXd::Constant(1, 0.6);
        DgpComponent z;
        z.weight = 1.0;
        z.base_mean = Eigen::VectorXd::Zero(1);
        z.loading = Eigen::MatrixXd::Constant(1, 1, 0.4);
        z.noise_scale = Eigen::VectorXd::Constant(1, 0.9);
        dgp.arms[1] = {a, b};
        dgp.arms[0] = {z};
    } else if (name == "lowdim2d") {
        dgp.d = 2;
        dgp.d_star = 1;
        dgp.k = 2;
        dgp.logit_coef = Eigen::Vector3d(0.0, 0.3, 0.0);
        dgp.declared_pi_min = 0.05;
        DgpComponent c1;
        c1.weight = 1.0;
        c1.base_mean = Eigen::Vector2d(0.0, 0.0);
        c1.loading = (Eigen::Matrix2d() << 0.9, 0.3, 0.0, 0.0).finished();
        c1.noise_scale = Eigen::Vector2d(0.6, 0.05);
        DgpComponent c0 = c1;
        c0.base_mean = Eigen::Vector2d(-0.4, 0.0);
        dgp.arms[1] = {c1};
        dgp.arms[0] = {c0};
    } else if (name == "ambient10") {
        dgp.d = 10;
        dgp.d_star = 2;
        dgp.k = 3;
        dgp.logit_coef = (Eigen::VectorXd(4) << 0.1, 0.3, -0.2, 0.2).finished();
        dgp.declared_pi_min = 0.05;
        DgpComponent c1;
        c1.weight = 1.0;
        c1.base_mean = Eigen::VectorXd::Zero(10);
        c1.base_mean[0] = 0.4;
        c1.loading = Eigen::MatrixXd::Zero(10, 3);
        c1.loading(0, 0) = 0.8;
        c1.loading(0, 1) = 0.2;
        c1.loading(2, 1) = 0.7;
        c1.loading(2, 2) = 0.3;
        c1.noise_scale = Eigen::VectorXd::Constant(10, 0.03);
        c1.noise_scale[0] = 0.6;
        c1.noise_scale[2] = 0.6;
        DgpComponent c0 = c1;
        c0.base_mean[0] = -0.4;
        dgp.arms[1] = {c1};
        dgp.arms[0] = {c0};
        dgp.projection = Eigen::MatrixXd::Zero(2, 10);
        dgp.projection(0, 0) = 1.0;
        dgp.projection(1, 3) = 1.0;
    } else {
        throw ConfigError("unknown DGP preset: " + name);
    }
    return dgp;
}

std::vector<std::string> dgp_preset_names() {
    return {"gauss2d", "mix1d", "lowdim2d", "ambient10"};
}

ObservationBatch generate(const SyntheticDGP& dgp, Eigen::Index n, const SeedPolicy& seed) {
    if (n < 1) throw std::invalid_argument("generate: n must be positive");
    Rng rng = seed.stream("generate");
    ObservationBatch batch;
    batch.x.resize(n, dgp.k);
    batch.a.resize(n);
    batch.y.resize(n, dgp.d);
    batch.labels = {0, 1};
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd x(dgp.k);
        for (int j = 0; j < dgp.k; ++j) x[j] = rng.normal();
        batch.x.row(i) = x.transpose();
        const int a = rng.uniform() < dgp.propensity(1, x) ? 1 : 0;
        batch.a[i] = a;
        batch.y.row(i) = dgp.conditional_law(a, x).sample(rng).transpose();
    }
    batch.validate();
    return batch;
}

GaussianMixtureLaw evaluation_law(const SyntheticDGP& dgp, int arm) {
    return dgp.projection.size() > 0 ? dgp.projected_counterfactual_law(arm, dgp.projection)
                                     : dgp.counterfactual_law(arm);
}

ObservationBatch project_outcomes(const SyntheticDGP& dgp, const ObservationBatch& batch) {
    if (dgp.projection.size() == 0) return batch;
    ObservationBatch out = batch;
    out.y = batch.y * dgp.projection.transpose();
    return out;
}

ConditionalOracle make_dgp_oracle(const SyntheticDGP& dgp, int arm,
                                  const SmoothingKernel& kernel) {
    const Eigen::MatrixXd proj = dgp.projection;
    ConditionalOracle oracle;
    oracle.propensity = [dgp, arm](const Eigen::VectorXd& x) { return dgp.propensity(arm, x); };

    auto projected_conditional = [dgp, arm, proj](const Eigen::VectorXd& x) {
        GaussianMixtureLaw law = dgp.conditional_law(arm, x);
        if (proj.size() == 0) return law;
        GaussianMixtureLaw out;
        for (const auto& c : law.components) {
            out.components.push_back(
                {c.weight, proj * c.mean, proj * c.covariance * proj.transpose()});
        }
        return out;
    };
    oracle.sample_outcome = [projected_conditional](const Eigen::VectorXd& x, Rng& rng) {
        return Eigen::VectorXd(projected_conditional(x).sample(rng));
    };
    const SmoothingKernel* k = &kernel;
    oracle.exact_mu = [projected_conditional, k](const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y) {
        return population_density_at(projected_conditional(x), *k, y);
    };
    oracle.exact_nu = [projected_conditional, k](const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y) {
        return population_gradient_at(projected_conditional(x), *k, y);
    };
    return oracle;
}

Eigen::VectorXd population_density(const SyntheticDGP& dgp, int arm,
                                   const SmoothingKernel& kernel, const Grid& grid) {
    return population_density(evaluation_law(dgp, arm), kernel, grid);
}

Eigen::VectorXd population_density(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                   const Grid& grid) {
    Eigen::VectorXd out(grid.size());
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        out[g] = population_density_at(law, kernel, grid.points.row(g).transpose());
    }
    return out;
}

Eigen::MatrixXd population_gradient(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                    const Grid& grid) {
    Eigen::MatrixXd out(grid.size(), grid.dim());
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        out.row(g) = population_gradient_at(law, kernel, grid.points.row(g).transpose()).transpose();
    }
    return out;
}

Eigen::MatrixXd population_score(const SyntheticDGP& dgp, int arm, const SmoothingKernel& kernel,
                                 const Grid& grid) {
    return population_score(evaluation_law(dgp, arm), kernel, grid);
}

Eigen::MatrixXd population_score(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                                 const Grid& grid) {
    const Eigen::VectorXd p = population_density(law, kernel, grid);
    const Eigen::MatrixXd g = population_gradient(law, kernel, grid);
    Eigen::MatrixXd s(grid.size(), grid.dim());
    for (Eigen::Index i = 0; i < grid.size(); ++i) s.row(i) = g.row(i) / p[i];
    return s;
}

double population_stein(const GaussianMixtureLaw& law, const SmoothingKernel& kernel,
                        const Grid& grid, const TestField& g) {
    const Eigen::VectorXd p = population_density(law, kernel, grid);
    const Eigen::MatrixXd grad = population_gradient(law, kernel, grid);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
        const Eigen::VectorXd y = grid.points.row(i).transpose();
        acc += grid.weights[i] * (g.divergence(y) * p[i] + g.value(y).dot(grad.row(i)));
    }
    return acc;
}

double ise(const Eigen::VectorXd& estimate, const Eigen::VectorXd& target, const Grid& grid) {
    if (estimate.size() != grid.size() || target.size() != grid.size()) {
        throw std::invalid_argument("ise: grid mismatch");
    }
    return (grid.weights.array() * (estimate - target).array().square()).sum();
}

double ise(const GridEstimate& estimate, const Eigen::VectorXd& target, const Grid& grid) {
    if (estimate.grid_fingerprint != grid.fingerprint()) {
        throw std::invalid_argument("ise: estimate was computed on a different grid");
    }
    if (estimate.vdim() != 1) throw std::invalid_argument("ise: expected scalar values");
    return ise(estimate.values.col(0), target, grid);
}

RateCurve rate_slope(const std::vector<double>& n, const std::vector<double>& error,
                     const std::vector<double>& error_se) {
    if (n.size() < 3 || n.size() != error.size()) {
        throw std::invalid_argument("rate_slope: need at least 3 matched points");
    }
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (error[i] <= 0.0) throw std::invalid_argument("rate_slope: nonpositive error");
        if (i > 0 && n[i] <= n[i - 1]) {
            throw std::invalid_argument("rate_slope: n must be strictly increasing");
        }
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < n.size(); ++i) {
        lx.push_back(std::log(n[i]));
        ly.push_back(std::log(error[i]));
    }
    const OlsFit fit = ols_fit(lx, ly);
    RateCurve curve;
    curve.n = n;
    curve.error = error;
    curve.error_se = error_se;
    curve.slope = fit.slope;
    curve.slope_se = fit.slope_se;
    curve.intercept = fit.intercept;
    return curve;
}

std::string DriftReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "h,eps,drift\n";
    for (std::size_t i = 0; i < h.size(); ++i) {
        for (std::size_t j = 0; j < eps.size(); ++j) {
            out << h[i] << "," << eps[j] << ","
                << drift(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << "\n";
        }
    }
    return out.str();
}

DriftReport drift_diagnostic(const PerturbedKernelFactory& factory,
                             const std::vector<double>& h_values,
                             const std::vector<double>& eps_values,
                             const Eigen::MatrixXd& law_samples, const Grid& grid, int workers) {
    if (h_values.empty() || eps_values.empty()) {
        throw std::invalid_argument("drift: empty (h, eps) grid");
    }
    DriftReport report;
    report.h = h_values;
    report.eps = eps_values;
    report.drift.resize(static_cast<Eigen::Index>(h_values.size()),
                        static_cast<Eigen::Index>(eps_values.size()));

    const auto n = law_samples.rows();
    for (std::size_t hi = 0; hi < h_values.size(); ++hi) {
        const auto base = factory(h_values[hi], 0.0);
        for (std::size_t ei = 0; ei < eps_values.size(); ++ei) {
            const auto pert = factory(h_values[hi], eps_values[ei]);
            std::vector<double> per_sample(static_cast<std::size_t>(n), 0.0);
            parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
                const Eigen::VectorXd u =
                    law_samples.row(static_cast<Eigen::Index>(i)).transpose();
                double acc = 0.0;
                for (Eigen::Index g = 0; g < grid.size(); ++g) {
                    const Eigen::VectorXd y = grid.points.row(g).transpose();
                    const double diff = pert->eval(y, u) - base->eval(y, u);
                    acc += grid.weights[g] * diff * diff;
                }
                per_sample[i] = acc;
            });
            double total = 0.0;
            for (const double v : per_sample) total += v;
            report.drift(static_cast<Eigen::Index>(hi), static_cast<Eigen::Index>(ei)) =
                std::sqrt(total / static_cast<double>(n));
        }
    }

    // Joint fit log drift = a + b_h log(1/h) + b_eps log eps on positive cells.
    std::vector<Eigen::Vector3d> rows;
    std::vector<double> rhs;
    for (std::size_t hi = 0; hi < h_values.size(); ++hi) {
        for (std::size_t ei = 0; ei < eps_values.size(); ++ei) {
            const double drift =
                report.drift(static_cast<Eigen::Index>(hi), static_cast<Eigen::Index>(ei));
            if (eps_values[ei] <= 0.0 || drift <= 0.0) continue;
            rows.emplace_back(1.0, std::log(1.0 / h_values[hi]), std::log(eps_values[ei]));
            rhs.push_back(std::log(drift));
        }
    }
    if (rows.size() >= 3) {
        Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 3);
        Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
            b[static_cast<Eigen::Index>(i)] = rhs[i];
        }
        const Eigen::VectorXd coef =
            (X.transpose() * X).ldlt().solve(X.transpose() * b);
        report.h_exponent = coef[1];
        report.eps_exponent = coef[2];
    }
    return report;
}

}  // namespace cfgeo
