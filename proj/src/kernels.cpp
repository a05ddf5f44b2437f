#include "cfgeo/kernels.hpp"

#include <algorithm>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>
#include <utility>

#include "cfgeo/parallel.hpp"

namespace cfgeo {

namespace {

// Probability-flow field f(z,t) = -0.5 beta(t) (z + s(z,t)) and its
// divergence -0.5 beta(t) (d + tr grad s).
Eigen::VectorXd flow_field(const ForwardDiffusionSpec& spec, const ScoreField& score,
                           const Eigen::VectorXd& z, double t) {
    return -0.5 * spec.beta(t) * (z + score.eval(z, t));
}

double flow_divergence(const ForwardDiffusionSpec& spec, const ScoreField& score,
                       const Eigen::VectorXd& z, double t) {
    const double d = static_cast<double>(z.size());
    return -0.5 * spec.beta(t) * (d + score.jacobian(z, t).trace());
}

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

OlsFit ols_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = x.size();
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / static_cast<double>(n);
    const double my = sy / static_cast<double>(n);
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

}  // namespace

FlowResult reverse_flow(const ForwardDiffusionSpec& spec, const ScoreField& score, double eps,
                        const Eigen::VectorXd& z_start, FlowDirection direction, int steps) {
    if (eps <= 0.0 || eps > 1.0) throw std::invalid_argument("reverse_flow: eps outside (0,1]");
    if (steps < 1) throw std::invalid_argument("reverse_flow: steps must be positive");

    const double t0 = direction == FlowDirection::NoisyToClean ? eps : 0.0;
    const double t1 = direction == FlowDirection::NoisyToClean ? 0.0 : eps;
    const double dt = (t1 - t0) / steps;

    Eigen::VectorXd z = z_start;
    double log_jac = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * dt;
        const Eigen::VectorXd k1 = flow_field(spec, score, z, t);
        const double g1 = flow_divergence(spec, score, z, t);
        const Eigen::VectorXd k2 = flow_field(spec, score, z + 0.5 * dt * k1, t + 0.5 * dt);
        const double g2 = flow_divergence(spec, score, z + 0.5 * dt * k1, t + 0.5 * dt);
        const Eigen::VectorXd k3 = flow_field(spec, score, z + 0.5 * dt * k2, t + 0.5 * dt);
        const double g3 = flow_divergence(spec, score, z + 0.5 * dt * k2, t + 0.5 * dt);
        const Eigen::VectorXd k4 = flow_field(spec, score, z + dt * k3, t + dt);
        const double g4 = flow_divergence(spec, score, z + dt * k3, t + dt);
        z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        log_jac += dt / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4);
        if (!z.allFinite() || !std::isfinite(log_jac)) {
            throw FlowBlowupError(t + dt);
        }
    }
    return {std::move(z), log_jac};
}

Eigen::VectorXd SmoothingKernel::grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    const double step = fd_step();
    Eigen::VectorXd g(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        Eigen::VectorXd hi = y, lo = y;
        hi[j] += step;
        lo[j] -= step;
        g[j] = (eval(hi, u) - eval(lo, u)) / (2.0 * step);
    }
    return g;
}

IsotropicGaussianKernel::IsotropicGaussianKernel(double h, Eigen::Index d) : h_(h), d_(d) {
    if (h <= 0.0) throw std::invalid_argument("kernel: h must be positive");
    if (d < 1) throw std::invalid_argument("kernel: dimension must be positive");
    log_norm_ = -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * h * h);
}

double IsotropicGaussianKernel::eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    return std::exp(log_norm_ - 0.5 * (y - u).squaredNorm() / (h_ * h_));
}

Eigen::VectorXd IsotropicGaussianKernel::grad(const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& u) const {
    return eval(y, u) * (u - y) / (h_ * h_);
}

Eigen::MatrixXd IsotropicGaussianKernel::sample(const Eigen::VectorXd& u, Eigen::Index count,
                                                Rng& rng) const {
    Eigen::MatrixXd out(count, d_);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < d_; ++j) out(i, j) = u[j] + h_ * rng.normal();
    }
    return out;
}

std::string IsotropicGaussianKernel::id() const {
    std::ostringstream ss;
    ss << "iso-gauss(h=" << h_ << ",d=" << d_ << ")";
    return ss.str();
}

AnisotropicGaussianKernel::AnisotropicGaussianKernel(const Eigen::MatrixXd& covariance)
    : cov_(covariance) {
    llt_.compute(cov_);
    if (llt_.info() != Eigen::Success) {
        throw std::invalid_argument("kernel: covariance is not positive definite");
    }
    double log_det = 0.0;
    for (Eigen::Index j = 0; j < cov_.rows(); ++j) log_det += 2.0 * std::log(llt_.matrixL()(j, j));
    const double d = static_cast<double>(cov_.rows());
    log_norm_ = -0.5 * (d * std::log(2.0 * M_PI) + log_det);
    scale_ = std::sqrt(cov_.trace() / d);
}

double AnisotropicGaussianKernel::eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    const Eigen::VectorXd w = llt_.matrixL().solve(y - u);
    return std::exp(log_norm_ - 0.5 * w.squaredNorm());
}

Eigen::VectorXd AnisotropicGaussianKernel::grad(const Eigen::VectorXd& y,
                                                const Eigen::VectorXd& u) const {
    return eval(y, u) * llt_.solve(u - y);
}

Eigen::MatrixXd AnisotropicGaussianKernel::sample(const Eigen::VectorXd& u, Eigen::Index count,
                                                  Rng& rng) const {
    const auto d = dim();
    Eigen::MatrixXd out(count, d);
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
        out.row(i) = (u + llt_.matrixL() * z).transpose();
    }
    return out;
}

std::string AnisotropicGaussianKernel::id() const {
    std::ostringstream ss;
    ss << "aniso-gauss(tr=" << cov_.trace() << ",d=" << cov_.rows() << ")";
    return ss.str();
}

LocalGeometryKernel::LocalGeometryKernel(double h, const Eigen::MatrixXd& arm_outcomes,
                                         const Grid& grid, int k_nn, double ridge)
    : h_(h), dim_(grid.dim()), anchors_(grid.points) {
    if (h <= 0.0) throw std::invalid_argument("kernel: h must be positive");
    if (arm_outcomes.cols() != dim_) {
        throw std::invalid_argument("kernel: outcome and grid dimensions disagree");
    }
    const double h2 = h * h;
    locals_.reserve(static_cast<std::size_t>(anchors_.rows()));
    for (Eigen::Index g = 0; g < anchors_.rows(); ++g) {
        const Eigen::VectorXd anchor = anchors_.row(g).transpose();
        // Floor the neighbor count so the neighborhood spans at least the
        // smoothing scale; otherwise the proxy collapses as n grows.
        int within = 0;
        for (Eigen::Index i = 0; i < arm_outcomes.rows(); ++i) {
            if ((arm_outcomes.row(i).transpose() - anchor).norm() <= 2.0 * h) ++within;
        }
        const int k_eff = std::max(k_nn, within);
        const Eigen::MatrixXd proxy = fit_pca_proxy(arm_outcomes, anchor, k_eff, ridge);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(proxy);
        const Eigen::VectorXd widths =
            (h2 * es.eigenvalues().array() / (es.eigenvalues().array() + h2)).matrix();
        const Eigen::MatrixXd cov =
            es.eigenvectors() * widths.asDiagonal() * es.eigenvectors().transpose();
        locals_.push_back(std::make_unique<AnisotropicGaussianKernel>(cov));
    }
}

const AnisotropicGaussianKernel& LocalGeometryKernel::local(const Eigen::VectorXd& y) const {
    Eigen::Index best = 0;
    double best_dist = (anchors_.row(0).transpose() - y).squaredNorm();
    for (Eigen::Index g = 1; g < anchors_.rows(); ++g) {
        const double dist = (anchors_.row(g).transpose() - y).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = g;
        }
    }
    return *locals_[static_cast<std::size_t>(best)];
}

double LocalGeometryKernel::eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    return local(y).eval(y, u);
}

Eigen::VectorXd LocalGeometryKernel::grad(const Eigen::VectorXd& y,
                                          const Eigen::VectorXd& u) const {
    return local(y).grad(y, u);
}

Eigen::MatrixXd LocalGeometryKernel::sample(const Eigen::VectorXd& u, Eigen::Index count,
                                            Rng& rng) const {
    return local(u).sample(u, count, rng);
}

std::string LocalGeometryKernel::id() const {
    std::ostringstream ss;
    ss << "local-geometry(h=" << h_ << ",anchors=" << anchors_.rows() << ")";
    return ss.str();
}

TransportedKernel::TransportedKernel(ForwardDiffusionSpec spec,
                                     std::shared_ptr<const ScoreField> score, double h,
                                     Eigen::Index d, int steps)
    : spec_(spec), score_(std::move(score)), h_(h), d_(d), steps_(steps) {
    if (!score_) throw std::invalid_argument("kernel: null score field");
    eps_ = spec_.eps_of_h(h);
    alpha_ = spec_.alpha(eps_);

    const GaussianMixtureLaw* law = score_->exact_mixture();
    if (law && law->components.size() == 1) {
        const auto& c = law->components.front();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.covariance);
        basis_ = es.eigenvectors();
        base_mean_ = c.mean;
        diag_scale_.resize(d_);
        affine_log_jac_ = 0.0;
        for (Eigen::Index j = 0; j < d_; ++j) {
            const double lam = es.eigenvalues()[j];
            const double lam_eps = alpha_ * alpha_ * lam + (1.0 - alpha_ * alpha_);
            diag_scale_[j] = std::sqrt(lam_eps / lam);
            affine_log_jac_ += 0.5 * (std::log(lam_eps) - std::log(lam));
        }
        affine_ = true;
    }
}

double TransportedKernel::log_eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    const GaussianTransition q = forward_transition(spec_, eps_, u);
    if (affine_) {
        const Eigen::VectorXd back =
            alpha_ * base_mean_ +
            basis_ * (diag_scale_.asDiagonal() * (basis_.transpose() * (y - base_mean_)));
        return q.log_density(back) + affine_log_jac_;
    }
    const FlowResult flow = reverse_flow(spec_, *score_, eps_, y, FlowDirection::CleanToNoisy, steps_);
    return q.log_density(flow.endpoint) + flow.log_jacobian;
}

double TransportedKernel::eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    return std::exp(log_eval(y, u));
}

Eigen::VectorXd TransportedKernel::grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const {
    if (affine_) {
        const Eigen::VectorXd back =
            alpha_ * base_mean_ +
            basis_ * (diag_scale_.asDiagonal() * (basis_.transpose() * (y - base_mean_)));
        const double var = 1.0 - alpha_ * alpha_;
        const Eigen::VectorXd resid = (alpha_ * u - back) / var;
        const Eigen::VectorXd grad_log =
            basis_ * (diag_scale_.asDiagonal() * (basis_.transpose() * resid));
        return eval(y, u) * grad_log;
    }
    return SmoothingKernel::grad(y, u);
}

Eigen::MatrixXd TransportedKernel::sample(const Eigen::VectorXd& u, Eigen::Index count,
                                          Rng& rng) const {
    const double sd = std::sqrt(1.0 - alpha_ * alpha_);
    Eigen::MatrixXd out(count, d_);
    Eigen::VectorXd z(d_);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < d_; ++j) z[j] = alpha_ * u[j] + sd * rng.normal();
        if (affine_) {
            out.row(i) =
                (base_mean_ + basis_ * (diag_scale_.asDiagonal().inverse() *
                                        (basis_.transpose() * (z - alpha_ * base_mean_))))
                    .transpose();
        } else {
            out.row(i) =
                reverse_flow(spec_, *score_, eps_, z, FlowDirection::NoisyToClean, steps_)
                    .endpoint.transpose();
        }
    }
    return out;
}

std::string TransportedKernel::id() const {
    std::ostringstream ss;
    ss << "transported(" << score_->kind() << ",h=" << h_ << ",eps=" << eps_ << ")";
    return ss.str();
}

KernelMoments kernel_moments(const SmoothingKernel& kernel, const Eigen::VectorXd& anchor,
                             Eigen::Index mc_count, const SeedPolicy& seed) {
    if (mc_count < 2) throw std::invalid_argument("kernel_moments: mc_count must be at least 2");
    Rng rng = seed.stream("kernel-moments");
    const Eigen::MatrixXd draws = kernel.sample(anchor, mc_count, rng);

    KernelMoments m;
    m.mc_count = mc_count;
    m.mean = draws.colwise().mean();
    const Eigen::MatrixXd centered = draws.rowwise() - m.mean.transpose();
    m.covariance = centered.transpose() * centered / static_cast<double>(mc_count);
    m.mean_se = (m.covariance.diagonal() / static_cast<double>(mc_count)).cwiseSqrt();

    const auto d = kernel.dim();
    const double floor = 1e-10 * m.covariance.trace() / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.covariance);
    if (es.eigenvalues().minCoeff() <= floor) {
        throw std::runtime_error("kernel_moments: covariance below the SPD floor");
    }
    m.precision = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                  es.eigenvectors().transpose();
    return m;
}

std::string PeakinessReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "h,H,Hs,d_eff\n";
    for (std::size_t i = 0; i < h.size(); ++i) {
        out << h[i] << "," << H[i] << ",";
        if (i < Hs.size()) {
            out << Hs[i];
        } else {
            out << "nan";
        }
        out << "," << d_eff[i] << "\n";
    }
    return out.str();
}

PeakinessReport peakiness(const KernelFactory& factory, const std::vector<double>& h_values,
                          const Eigen::MatrixXd& law_samples, const Grid& grid,
                          bool include_score, int workers) {
    {
        std::vector<double> distinct(h_values);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (distinct.size() < 2) {
            throw std::invalid_argument("peakiness: need at least two distinct h values");
        }
    }
    if (law_samples.rows() < 1) throw std::invalid_argument("peakiness: no law samples");

    PeakinessReport report;
    const auto n = law_samples.rows();
    const auto m = grid.size();
    for (double h : h_values) {
        const auto kernel = factory(h);
        std::vector<double> per_sample(static_cast<std::size_t>(n), 0.0);
        std::vector<double> per_sample_score(static_cast<std::size_t>(n), 0.0);
        parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
            const Eigen::VectorXd u = law_samples.row(static_cast<Eigen::Index>(i)).transpose();
            double acc = 0.0, acc_s = 0.0;
            for (Eigen::Index g = 0; g < m; ++g) {
                const Eigen::VectorXd y = grid.points.row(g).transpose();
                const double k = kernel->eval(y, u);
                acc += grid.weights[g] * k * k;
                if (include_score) {
                    acc_s += grid.weights[g] * kernel->grad(y, u).squaredNorm();
                }
            }
            per_sample[i] = acc;
            per_sample_score[i] = acc_s;
        });
        double H = 0.0, Hs = 0.0;
        for (std::size_t i = 0; i < per_sample.size(); ++i) {
            H += per_sample[i];
            Hs += per_sample_score[i];
        }
        H /= static_cast<double>(n);
        Hs /= static_cast<double>(n);
        report.h.push_back(h);
        report.H.push_back(H);
        if (include_score) report.Hs.push_back(H + Hs);
        const double log_inv_h = std::log(1.0 / h);
        report.d_eff.push_back(log_inv_h > 0.0 ? std::log(std::max(H, 1.0)) / log_inv_h : 0.0);
    }

    if (report.h.size() >= 2) {
        std::vector<double> lx, ly;
        for (std::size_t i = 0; i < report.h.size(); ++i) {
            lx.push_back(std::log(1.0 / report.h[i]));
            ly.push_back(std::log(std::max(report.H[i], 1e-300)));
        }
        const OlsFit fit = ols_fit(lx, ly);
        report.slope = fit.slope;
        report.slope_se = fit.slope_se;
    }
    return report;
}

}  // namespace cfgeo
