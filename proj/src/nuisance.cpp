#include "cfgeo/nuisance.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

#include "cfgeo/parallel.hpp"

namespace cfgeo {

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

Eigen::VectorXd design_row(const Eigen::VectorXd& x) {
    Eigen::VectorXd z(x.size() + 1);
    z[0] = 1.0;
    z.tail(x.size()) = x;
    return z;
}

// Ridge-stabilized IRLS for logistic regression; returns (coef, converged).
std::pair<Eigen::VectorXd, bool> irls_logistic(const Eigen::MatrixXd& Z,
                                               const Eigen::VectorXd& target) {
    const auto p = Z.cols();
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
    const double ridge = 1e-8;
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::VectorXd eta = Z * coef;
        Eigen::VectorXd prob(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            prob[i] = sigmoid(eta[i]);
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
        }
        const Eigen::MatrixXd H =
            Z.transpose() * w.asDiagonal() * Z + ridge * Eigen::MatrixXd::Identity(p, p);
        const Eigen::VectorXd g = Z.transpose() * (target - prob) - ridge * coef;
        const Eigen::VectorXd step = H.ldlt().solve(g);
        coef += step;
        if (step.norm() < 1e-10 * std::max(1.0, coef.norm())) {
            converged = true;
            break;
        }
    }
    return {coef, converged};
}

}  // namespace

double PropensityModel::predict(const Eigen::VectorXd& x) const {
    const double p = sigmoid(coef[0] + coef.tail(x.size()).dot(x));
    return std::max(p, clip);
}

PropensityFit fit_propensity(const ObservationBatch& batch, int arm, const CrossFitPlan& plan,
                             double clip) {
    batch.validate();
    if (static_cast<Eigen::Index>(plan.assignment.size()) != batch.n()) {
        throw std::invalid_argument("propensity: plan size does not match batch");
    }
    PropensityFit fit;
    fit.heldout.resize(batch.n());
    for (int f = 0; f < plan.folds; ++f) {
        const auto train = plan.fold_complement(f);
        Eigen::MatrixXd Z(static_cast<Eigen::Index>(train.size()), batch.k() + 1);
        Eigen::VectorXd target(static_cast<Eigen::Index>(train.size()));
        for (std::size_t r = 0; r < train.size(); ++r) {
            const auto i = static_cast<Eigen::Index>(train[r]);
            Z.row(static_cast<Eigen::Index>(r)) = design_row(batch.x.row(i).transpose()).transpose();
            target[static_cast<Eigen::Index>(r)] = batch.a[i] == arm ? 1.0 : 0.0;
        }
        if (target.minCoeff() == target.maxCoeff()) {
            throw std::invalid_argument("propensity: degenerate fold " + std::to_string(f) +
                                        " contains a single arm");
        }
        auto [coef, converged] = irls_logistic(Z, target);
        PropensityModel model;
        model.coef = coef;
        model.clip = clip;
        model.converged = converged;
        for (const auto unit : plan.fold_members(f)) {
            const auto i = static_cast<Eigen::Index>(unit);
            const double raw = sigmoid(coef[0] + coef.tail(batch.k()).dot(batch.x.row(i)));
            if (raw < clip) ++fit.clip_events;
            fit.heldout[i] = model.predict(batch.x.row(i).transpose());
        }
        fit.per_fold.push_back(std::move(model));
    }
    return fit;
}

CrossFitNuisance fit_localized_regressions(const ObservationBatch& batch, int arm,
                                           const CrossFitPlan& plan, const SmoothingKernel& kernel,
                                           const Grid& grid, const NuisanceOptions& options,
                                           int workers) {
    batch.validate();
    const auto n = batch.n();
    const auto m = grid.size();
    const auto d = grid.dim();
    const auto p = batch.k() + 1;
    if (static_cast<Eigen::Index>(plan.assignment.size()) != n) {
        throw std::invalid_argument("nuisance: plan size does not match batch");
    }

    CrossFitNuisance out;
    out.arm = arm;
    out.kernel_id = kernel.id();
    out.grid_fingerprint = grid.fingerprint();
    out.plan = plan;
    out.has_grad = options.with_grad;
    out.pi.resize(n);
    out.mu.resize(n, m);
    if (options.with_grad) out.nu.resize(n, m * d);

    const PropensityFit prop = fit_propensity(batch, arm, plan, options.clip);
    out.pi = prop.heldout;
    out.clip_events = prop.clip_events;
    for (const auto& model : prop.per_fold) out.propensity_coef.push_back(model.coef);

    // Kernel targets are shared across folds: kappa(y_g; Y_i) per arm unit.
    const auto arm_idx = batch.arm_indices(arm);
    if (arm_idx.size() < static_cast<std::size_t>(p)) {
        throw std::invalid_argument("nuisance: too few arm observations for regression");
    }
    const auto na = static_cast<Eigen::Index>(arm_idx.size());
    Eigen::MatrixXd targets(na, m);
    Eigen::MatrixXd grad_targets;
    if (options.with_grad) grad_targets.resize(na, m * d);
    parallel_for(static_cast<std::size_t>(na), workers, [&](std::size_t r) {
        const auto i = arm_idx[r];
        const Eigen::VectorXd u = batch.y.row(i).transpose();
        for (Eigen::Index g = 0; g < m; ++g) {
            const Eigen::VectorXd y = grid.points.row(g).transpose();
            targets(static_cast<Eigen::Index>(r), g) = kernel.eval(y, u);
            if (options.with_grad) {
                grad_targets.row(static_cast<Eigen::Index>(r)).segment(g * d, d) =
                    kernel.grad(y, u).transpose();
            }
        }
    });

    for (int f = 0; f < plan.folds; ++f) {
        std::vector<Eigen::Index> train_rows;
        for (Eigen::Index r = 0; r < na; ++r) {
            if (plan.assignment[static_cast<std::size_t>(arm_idx[static_cast<std::size_t>(r)])] != f) {
                train_rows.push_back(r);
            }
        }
        const auto nt = static_cast<Eigen::Index>(train_rows.size());
        if (nt < p) throw std::invalid_argument("nuisance: fold complement too small");
        const double ridge = options.ridge < 0.0 ? 1e-6 * static_cast<double>(nt) : options.ridge;

        Eigen::MatrixXd Z(nt, p);
        Eigen::MatrixXd T(nt, m);
        Eigen::MatrixXd Tg;
        if (options.with_grad) Tg.resize(nt, m * d);
        for (Eigen::Index r = 0; r < nt; ++r) {
            const auto i = arm_idx[static_cast<std::size_t>(train_rows[r])];
            Z.row(r) = design_row(batch.x.row(i).transpose()).transpose();
            T.row(r) = targets.row(train_rows[r]);
            if (options.with_grad) Tg.row(r) = grad_targets.row(train_rows[r]);
        }
        if (ridge == 0.0 &&
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(Z).rank() < p) {
            throw std::invalid_argument(
                "nuisance: singular normal equations; use ridge > 0");
        }
        const Eigen::MatrixXd G =
            Z.transpose() * Z + ridge * Eigen::MatrixXd::Identity(p, p);
        const auto ldlt = G.ldlt();
        const Eigen::MatrixXd C = ldlt.solve(Z.transpose() * T);
        Eigen::MatrixXd Cg;
        if (options.with_grad) Cg = ldlt.solve(Z.transpose() * Tg);
        out.mu_coef.push_back(C);

        for (const auto unit : plan.fold_members(f)) {
            const auto i = static_cast<Eigen::Index>(unit);
            const Eigen::VectorXd z = design_row(batch.x.row(i).transpose());
            out.mu.row(i) = (z.transpose() * C);
            if (options.with_grad) out.nu.row(i) = (z.transpose() * Cg);
        }
    }
    return out;
}

std::string CrossFitNuisance::to_json(std::size_t max_scalars) const {
    const std::size_t scalars =
        static_cast<std::size_t>(mu.size()) + static_cast<std::size_t>(nu.size()) +
        static_cast<std::size_t>(pi.size());
    if (scalars > max_scalars) {
        throw std::runtime_error("nuisance export exceeds the scalar cap");
    }
    nlohmann::json j;
    j["arm"] = arm;
    j["kernel_id"] = kernel_id;
    j["grid_fingerprint"] = grid_fingerprint;
    j["folds"] = plan.folds;
    j["assignment"] = plan.assignment;
    j["oracle"] = oracle;
    j["has_grad"] = has_grad;
    j["clip_events"] = clip_events;
    j["pi"] = std::vector<double>(pi.data(), pi.data() + pi.size());
    auto rows_of = [](const Eigen::MatrixXd& mat) {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < mat.rows(); ++i) {
            rows.emplace_back(mat.row(i).begin(), mat.row(i).end());
        }
        return rows;
    };
    j["mu"] = rows_of(mu);
    if (has_grad) j["nu"] = rows_of(nu);
    return j.dump();
}

CrossFitNuisance oracle_nuisance(const ConditionalOracle& oracle, const ObservationBatch& batch,
                                 int arm, const SmoothingKernel& kernel, const Grid& grid,
                                 bool with_grad, Eigen::Index mc_count, const SeedPolicy& seed,
                                 int workers) {
    batch.validate();
    if (!oracle.propensity || (!oracle.sample_outcome && !oracle.exact_mu)) {
        throw std::invalid_argument("oracle: propensity and an outcome path are required");
    }
    const auto n = batch.n();
    const auto m = grid.size();
    const auto d = grid.dim();

    CrossFitNuisance out;
    out.arm = arm;
    out.kernel_id = kernel.id();
    out.grid_fingerprint = grid.fingerprint();
    out.plan.folds = 1;
    out.plan.assignment.assign(static_cast<std::size_t>(n), 0);
    out.oracle = true;
    out.has_grad = with_grad;
    out.pi.resize(n);
    out.mu.resize(n, m);
    if (with_grad) out.nu.resize(n, m * d);

    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        const Eigen::VectorXd x = batch.x.row(i).transpose();
        out.pi[i] = oracle.propensity(x);

        if (oracle.exact_mu && (!with_grad || oracle.exact_nu)) {
            for (Eigen::Index g = 0; g < m; ++g) {
                const Eigen::VectorXd y = grid.points.row(g).transpose();
                out.mu(i, g) = oracle.exact_mu(x, y);
                if (with_grad) out.nu.row(i).segment(g * d, d) = oracle.exact_nu(x, y).transpose();
            }
            return;
        }

        Rng rng = seed.stream("oracle-mu", static_cast<std::uint64_t>(i));
        Eigen::VectorXd mu_acc = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd nu_acc = with_grad ? Eigen::VectorXd::Zero(m * d) : Eigen::VectorXd();
        for (Eigen::Index rep = 0; rep < mc_count; ++rep) {
            const Eigen::VectorXd u = oracle.sample_outcome(x, rng);
            for (Eigen::Index g = 0; g < m; ++g) {
                const Eigen::VectorXd y = grid.points.row(g).transpose();
                mu_acc[g] += kernel.eval(y, u);
                if (with_grad) nu_acc.segment(g * d, d) += kernel.grad(y, u);
            }
        }
        out.mu.row(i) = mu_acc.transpose() / static_cast<double>(mc_count);
        if (with_grad) out.nu.row(i) = nu_acc.transpose() / static_cast<double>(mc_count);
    });
    return out;
}

CrossFitNuisance perturb_nuisance(const CrossFitNuisance& base, double eps_pi, double eps_mu,
                                  double clip) {
    CrossFitNuisance out = base;
    for (Eigen::Index i = 0; i < out.pi.size(); ++i) {
        const double p = std::min(std::max(base.pi[i], clip), 1.0 - clip);
        const double logit = std::log(p / (1.0 - p));
        out.pi[i] = std::min(std::max(sigmoid(logit + eps_pi), clip), 1.0 - clip);
    }
    out.mu.array() += eps_mu;
    return out;
}

}  // namespace cfgeo
