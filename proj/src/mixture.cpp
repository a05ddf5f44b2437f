#include "cfgeo/mixture.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace cfgeo {

namespace {

struct ComponentCache {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_norm;
};

ComponentCache make_cache(const GaussianComponent& c) {
    ComponentCache cache;
    cache.llt.compute(c.covariance);
    if (cache.llt.info() != Eigen::Success) {
        throw std::invalid_argument("mixture: covariance is not positive definite");
    }
    double log_det = 0.0;
    const auto& L = cache.llt.matrixL();
    for (Eigen::Index j = 0; j < c.covariance.rows(); ++j) log_det += 2.0 * std::log(L(j, j));
    const double d = static_cast<double>(c.mean.size());
    cache.log_norm = -0.5 * (d * std::log(2.0 * M_PI) + log_det);
    return cache;
}

// Per-component log densities; returns the stabilized total log density and
// fills posterior responsibilities.
double log_density_and_posteriors(const GaussianMixtureLaw& law, const Eigen::VectorXd& z,
                                  Eigen::VectorXd* posteriors) {
    const auto m = static_cast<Eigen::Index>(law.components.size());
    Eigen::VectorXd logs(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& c = law.components[j];
        const auto cache = make_cache(c);
        const Eigen::VectorXd diff = z - c.mean;
        const Eigen::VectorXd w = cache.llt.matrixL().solve(diff);
        logs[j] = std::log(c.weight) + cache.log_norm - 0.5 * w.squaredNorm();
    }
    const double top = logs.maxCoeff();
    const double total = top + std::log((logs.array() - top).exp().sum());
    if (posteriors) *posteriors = (logs.array() - total).exp();
    return total;
}

}  // namespace

void GaussianMixtureLaw::validate() const {
    if (components.empty()) throw std::invalid_argument("mixture: no components");
    double wsum = 0.0;
    const auto d = dim();
    for (const auto& c : components) {
        if (c.mean.size() != d || c.covariance.rows() != d || c.covariance.cols() != d) {
            throw std::invalid_argument("mixture: inconsistent dimensions");
        }
        if (!c.covariance.isApprox(c.covariance.transpose(), 1e-10)) {
            throw std::invalid_argument("mixture: covariance not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.covariance);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            throw std::invalid_argument("mixture: covariance not positive definite");
        }
        wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-12) {
        throw std::invalid_argument("mixture: weights must sum to 1");
    }
}

double GaussianMixtureLaw::log_density(const Eigen::VectorXd& z) const {
    return log_density_and_posteriors(*this, z, nullptr);
}

double GaussianMixtureLaw::density(const Eigen::VectorXd& z) const {
    return std::exp(log_density(z));
}

Eigen::VectorXd GaussianMixtureLaw::score(const Eigen::VectorXd& z) const {
    Eigen::VectorXd posteriors;
    log_density_and_posteriors(*this, z, &posteriors);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(z.size());
    for (std::size_t j = 0; j < components.size(); ++j) {
        const auto& c = components[j];
        const auto cache = make_cache(c);
        s += posteriors[static_cast<Eigen::Index>(j)] * cache.llt.solve(c.mean - z);
    }
    return s;
}

Eigen::MatrixXd GaussianMixtureLaw::score_jacobian(const Eigen::VectorXd& z) const {
    Eigen::VectorXd posteriors;
    log_density_and_posteriors(*this, z, &posteriors);
    const auto d = z.size();
    const Eigen::VectorXd s = score(z);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t j = 0; j < components.size(); ++j) {
        const auto& c = components[j];
        const auto cache = make_cache(c);
        const double r = posteriors[static_cast<Eigen::Index>(j)];
        const Eigen::VectorXd g = cache.llt.solve(c.mean - z);
        jac += r * (-cache.llt.solve(Eigen::MatrixXd::Identity(d, d)) + g * (g - s).transpose());
    }
    return jac;
}

Eigen::VectorXd GaussianMixtureLaw::sample(Rng& rng) const {
    double u = rng.uniform();
    std::size_t pick = components.size() - 1;
    for (std::size_t j = 0; j < components.size(); ++j) {
        if (u < components[j].weight) {
            pick = j;
            break;
        }
        u -= components[j].weight;
    }
    const auto& c = components[pick];
    const auto cache = make_cache(c);
    Eigen::VectorXd z(c.mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return c.mean + cache.llt.matrixL() * z;
}

Eigen::MatrixXd GaussianMixtureLaw::sample(Rng& rng, Eigen::Index count) const {
    Eigen::MatrixXd out(count, dim());
    for (Eigen::Index i = 0; i < count; ++i) out.row(i) = sample(rng).transpose();
    return out;
}

Eigen::VectorXd GaussianMixtureLaw::mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
}

Eigen::MatrixXd GaussianMixtureLaw::covariance() const {
    const Eigen::VectorXd m = mean();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim(), dim());
    for (const auto& c : components) {
        const Eigen::VectorXd delta = c.mean - m;
        cov += c.weight * (c.covariance + delta * delta.transpose());
    }
    return cov;
}

GaussianMixtureLaw GaussianMixtureLaw::standard_normal(Eigen::Index d) {
    return single(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
}

GaussianMixtureLaw GaussianMixtureLaw::single(const Eigen::VectorXd& mean,
                                              const Eigen::MatrixXd& covariance) {
    GaussianMixtureLaw law;
    law.components.push_back({1.0, mean, covariance});
    return law;
}

GaussianMixtureLaw diffused_mixture(const GaussianMixtureLaw& law, double t,
                                    const ForwardDiffusionSpec& spec) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("diffused_mixture: t outside [0,1]");
    const double a = spec.alpha(t);
    GaussianMixtureLaw out;
    const auto d = law.dim();
    for (const auto& c : law.components) {
        out.components.push_back(
            {c.weight, a * c.mean,
             a * a * c.covariance + (1.0 - a * a) * Eigen::MatrixXd::Identity(d, d)});
    }
    return out;
}

Eigen::VectorXd mixture_score(const GaussianMixtureLaw& law, const Eigen::VectorXd& z) {
    return law.score(z);
}

std::string mixture_to_json(const GaussianMixtureLaw& law) {
    nlohmann::json j;
    for (const auto& c : law.components) {
        j["weights"].push_back(c.weight);
        j["means"].push_back(std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size()));
        std::vector<std::vector<double>> cov;
        for (Eigen::Index r = 0; r < c.covariance.rows(); ++r) {
            cov.emplace_back(c.covariance.row(r).begin(), c.covariance.row(r).end());
        }
        j["covariances"].push_back(cov);
    }
    return j.dump(2);
}

GaussianMixtureLaw mixture_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    GaussianMixtureLaw law;
    const auto count = j.at("weights").size();
    for (std::size_t i = 0; i < count; ++i) {
        GaussianComponent c;
        c.weight = j.at("weights")[i].get<double>();
        const auto mean = j.at("means")[i].get<std::vector<double>>();
        c.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                                   static_cast<Eigen::Index>(mean.size()));
        const auto cov = j.at("covariances")[i].get<std::vector<std::vector<double>>>();
        const auto d = static_cast<Eigen::Index>(cov.size());
        c.covariance.resize(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index s = 0; s < d; ++s) {
                c.covariance(r, s) = cov[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)];
            }
        }
        law.components.push_back(std::move(c));
    }
    law.validate();
    return law;
}

}  // namespace cfgeo
