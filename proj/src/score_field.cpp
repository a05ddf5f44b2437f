#include "cfgeo/score_field.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace cfgeo {

Eigen::MatrixXd ScoreField::jacobian(const Eigen::VectorXd& z, double t) const {
    // Central finite difference fallback.
    const auto d = z.size();
    const double step = 1e-5 * std::max(1.0, z.norm());
    Eigen::MatrixXd jac(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        Eigen::VectorXd hi = z, lo = z;
        hi[j] += step;
        lo[j] -= step;
        jac.col(j) = (eval(hi, t) - eval(lo, t)) / (2.0 * step);
    }
    return jac;
}

MixtureScoreField::MixtureScoreField(GaussianMixtureLaw law, ForwardDiffusionSpec spec)
    : law_(std::move(law)), spec_(spec) {
    law_.validate();
    comps_.reserve(law_.components.size());
    for (const auto& c : law_.components) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.covariance);
        comps_.push_back({std::log(c.weight), c.mean, es.eigenvectors(), es.eigenvalues()});
    }
}

Eigen::VectorXd MixtureScoreField::eval(const Eigen::VectorXd& z, double t) const {
    const double a = spec_.alpha(t);
    const double a2 = a * a;
    const auto d = z.size();
    const auto m = static_cast<Eigen::Index>(comps_.size());

    Eigen::VectorXd logs(m);
    Eigen::MatrixXd grads(d, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& c = comps_[static_cast<std::size_t>(j)];
        const Eigen::ArrayXd e = a2 * c.vals.array() + (1.0 - a2);
        const Eigen::ArrayXd u = (c.vecs.transpose() * (z - a * c.mean)).array();
        logs[j] = c.log_weight - 0.5 * (e.log().sum() + (u * u / e).sum()) -
                  0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
        grads.col(j) = c.vecs * (-u / e).matrix();
    }
    const double top = logs.maxCoeff();
    const Eigen::ArrayXd post = (logs.array() - top).exp() / (logs.array() - top).exp().sum();
    return grads * post.matrix();
}

Eigen::MatrixXd MixtureScoreField::jacobian(const Eigen::VectorXd& z, double t) const {
    const double a = spec_.alpha(t);
    const double a2 = a * a;
    const auto d = z.size();
    const auto m = static_cast<Eigen::Index>(comps_.size());

    Eigen::VectorXd logs(m);
    Eigen::MatrixXd grads(d, m);
    std::vector<Eigen::MatrixXd> precisions(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& c = comps_[static_cast<std::size_t>(j)];
        const Eigen::ArrayXd e = a2 * c.vals.array() + (1.0 - a2);
        const Eigen::ArrayXd u = (c.vecs.transpose() * (z - a * c.mean)).array();
        logs[j] = c.log_weight - 0.5 * (e.log().sum() + (u * u / e).sum()) -
                  0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
        grads.col(j) = c.vecs * (-u / e).matrix();
        precisions[static_cast<std::size_t>(j)] =
            c.vecs * e.inverse().matrix().asDiagonal() * c.vecs.transpose();
    }
    const double top = logs.maxCoeff();
    const Eigen::ArrayXd post = (logs.array() - top).exp() / (logs.array() - top).exp().sum();
    const Eigen::VectorXd s = grads * post.matrix();
    Eigen::MatrixXd jac = -s * s.transpose();
    for (Eigen::Index j = 0; j < m; ++j) {
        jac += post[j] * (grads.col(j) * grads.col(j).transpose() -
                          precisions[static_cast<std::size_t>(j)]);
    }
    return jac;
}

PerturbedScoreField::PerturbedScoreField(std::shared_ptr<const ScoreField> base, double eps,
                                         PerturbMode mode, Eigen::Index dim)
    : base_(std::move(base)), eps_(eps), mode_(mode) {
    if (!base_) throw std::invalid_argument("perturb: null base field");
    if (mode_ == PerturbMode::LinearTilt) {
        tilt_ = Eigen::VectorXd::Zero(dim);
        tilt_[0] = 1.0;
    } else {
        rotation_ = Eigen::MatrixXd::Zero(dim, dim);
        if (dim >= 2) {
            rotation_(0, 1) = 1.0;
            rotation_(1, 0) = -1.0;
        }
    }
}

Eigen::VectorXd PerturbedScoreField::eval(const Eigen::VectorXd& z, double t) const {
    const Eigen::VectorXd base = base_->eval(z, t);
    if (eps_ == 0.0) return base;
    if (mode_ == PerturbMode::LinearTilt) return base + eps_ * tilt_;
    return base + eps_ * (rotation_ * z) * std::exp(-0.5 * z.squaredNorm());
}

bool PerturbedScoreField::has_jacobian() const { return base_->has_jacobian(); }

Eigen::MatrixXd PerturbedScoreField::jacobian(const Eigen::VectorXd& z, double t) const {
    Eigen::MatrixXd jac = base_->jacobian(z, t);
    if (eps_ == 0.0 || mode_ == PerturbMode::LinearTilt) return jac;
    const double bump = std::exp(-0.5 * z.squaredNorm());
    jac += eps_ * bump * (rotation_ - (rotation_ * z) * z.transpose());
    return jac;
}

std::shared_ptr<const ScoreField> perturb_score(std::shared_ptr<const ScoreField> base,
                                                double eps, PerturbMode mode, Eigen::Index dim) {
    return std::make_shared<PerturbedScoreField>(std::move(base), eps, mode, dim);
}

Eigen::MatrixXd fit_pca_proxy(const ObservationBatch& batch, int arm,
                              const Eigen::VectorXd& anchor, int k_nn, double ridge) {
    const auto idx = batch.arm_indices(arm);
    if (idx.empty()) throw std::invalid_argument("pca proxy: no observations in arm");
    Eigen::MatrixXd arm_outcomes(static_cast<Eigen::Index>(idx.size()), batch.d());
    for (std::size_t i = 0; i < idx.size(); ++i) arm_outcomes.row(static_cast<Eigen::Index>(i)) = batch.y.row(idx[i]);
    return fit_pca_proxy(arm_outcomes, anchor, k_nn, ridge);
}

Eigen::MatrixXd fit_pca_proxy(const Eigen::MatrixXd& arm_outcomes, const Eigen::VectorXd& anchor,
                              int k_nn, double ridge) {
    const auto n = arm_outcomes.rows();
    const auto d = arm_outcomes.cols();
    if (k_nn < 2) throw std::invalid_argument("pca proxy: k_nn must be at least 2");
    if (n < k_nn) throw std::invalid_argument("pca proxy: not enough neighbors in arm");
    const auto k = static_cast<Eigen::Index>(k_nn);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist[i] = (arm_outcomes.row(i).transpose() - anchor).squaredNorm();
    }
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     [&dist](Eigen::Index a, Eigen::Index b) { return dist[a] < dist[b]; });

    Eigen::MatrixXd nbhd(k, d);
    for (Eigen::Index i = 0; i < k; ++i) nbhd.row(i) = arm_outcomes.row(order[static_cast<std::size_t>(i)]);
    const Eigen::RowVectorXd center = nbhd.colwise().mean();
    const Eigen::MatrixXd centered = nbhd.rowwise() - center;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(k);
    cov += ridge * Eigen::MatrixXd::Identity(d, d);
    return cov;
}

double default_pca_ridge(const Eigen::MatrixXd& covariance) {
    return 1e-3 * covariance.trace() / static_cast<double>(covariance.rows());
}

}  // namespace cfgeo
