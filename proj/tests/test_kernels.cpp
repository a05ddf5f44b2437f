#include <doctest.h>

#include <cmath>
#include <memory>

#include "cfgeo/kernels.hpp"
#include "cfgeo/mixture.hpp"
#include "cfgeo/score_field.hpp"

using namespace cfgeo;

namespace {

Grid line_grid(double lo, double hi, int points) {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Constant(1, lo);
    region.upper = Eigen::VectorXd::Constant(1, hi);
    region.grid_points_per_axis = points;
    return make_grid(region);
}

Grid square_grid(double lo, double hi, int per_axis) {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Constant(2, lo);
    region.upper = Eigen::VectorXd::Constant(2, hi);
    region.grid_points_per_axis = per_axis;
    return make_grid(region);
}

std::shared_ptr<const ScoreField> standard_normal_score(Eigen::Index d) {
    return std::make_shared<MixtureScoreField>(GaussianMixtureLaw::standard_normal(d),
                                               ForwardDiffusionSpec{});
}

GaussianMixtureLaw bimodal_1d() {
    GaussianMixtureLaw law;
    law.components.push_back(
        {0.5, Eigen::VectorXd::Constant(1, -1.0), Eigen::MatrixXd::Constant(1, 1, 0.4)});
    law.components.push_back(
        {0.5, Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 0.4)});
    return law;
}

// Diffused variance of N(0, v0) at time t under unit rate.
double gaussian_sigma_t(double v0, double t) {
    const double e = std::exp(-t);
    return e * v0 + (1.0 - e);
}

}  // namespace

TEST_CASE("reverse flow: standard normal geometry is the identity flow") {
    ForwardDiffusionSpec spec;
    const auto score = standard_normal_score(2);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd z(2);
        z << rng.normal(), rng.normal();
        for (const auto dir : {FlowDirection::NoisyToClean, FlowDirection::CleanToNoisy}) {
            const auto res = reverse_flow(spec, *score, 0.25, z, dir);
            CHECK((res.endpoint - z).norm() < 1e-13);
            CHECK(std::abs(res.log_jacobian) < 1e-13);
        }
    }
}

TEST_CASE("reverse flow: 1-d Gaussian base matches the linear-ODE closed form") {
    // Base N(0, v0): the flow is z(t) = z0 sqrt(Sigma_t / Sigma_0) with
    // Sigma_t = e^{-t} v0 + 1 - e^{-t}, and log J = log of the scale factor.
    ForwardDiffusionSpec spec;
    const double v0 = 4.0;
    const auto score = std::make_shared<MixtureScoreField>(
        GaussianMixtureLaw::single(Eigen::VectorXd::Zero(1),
                                   Eigen::MatrixXd::Constant(1, 1, v0)),
        spec);
    const double eps = 0.5;
    const double scale = std::sqrt(gaussian_sigma_t(v0, eps) / v0);
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        Eigen::VectorXd z(1);
        z << rng.uniform(-3.0, 3.0);
        const auto fwd = reverse_flow(spec, *score, eps, z, FlowDirection::CleanToNoisy, 200);
        CHECK(std::abs(fwd.endpoint[0] - z[0] * scale) < 1e-6);
        CHECK(std::abs(fwd.log_jacobian - std::log(scale)) < 1e-6);
        const auto bwd = reverse_flow(spec, *score, eps, z, FlowDirection::NoisyToClean, 200);
        CHECK(std::abs(bwd.endpoint[0] - z[0] / scale) < 1e-6);
        CHECK(std::abs(bwd.log_jacobian + std::log(scale)) < 1e-6);
    }
}

TEST_CASE("reverse flow: round trips invert and log-Jacobians cancel") {
    ForwardDiffusionSpec spec;
    const auto score = std::make_shared<MixtureScoreField>(bimodal_1d(), spec);
    Rng rng(3);
    for (int i = 0; i < 30; ++i) {
        Eigen::VectorXd z(1);
        z << rng.uniform(-2.5, 2.5);
        const auto out = reverse_flow(spec, *score, 0.16, z, FlowDirection::CleanToNoisy, 128);
        const auto back =
            reverse_flow(spec, *score, 0.16, out.endpoint, FlowDirection::NoisyToClean, 128);
        CHECK((back.endpoint - z).norm() < 1e-8);
        CHECK(std::abs(out.log_jacobian + back.log_jacobian) < 1e-8);
    }
}

TEST_CASE("reverse flow: argument validation") {
    ForwardDiffusionSpec spec;
    const auto score = standard_normal_score(1);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    CHECK_THROWS_AS(reverse_flow(spec, *score, 0.0, z, FlowDirection::NoisyToClean),
                    std::invalid_argument);
    CHECK_THROWS_AS(reverse_flow(spec, *score, 0.1, z, FlowDirection::NoisyToClean, 0),
                    std::invalid_argument);
}

TEST_CASE("transported kernel: identity flow reduces to the forward transition") {
    ForwardDiffusionSpec spec;
    const double h = 0.4;
    const TransportedKernel kernel(spec, standard_normal_score(2), h, 2);
    const double eps = spec.eps_of_h(h);
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd y(2), u(2);
        y << rng.normal(), rng.normal();
        u << rng.normal(), rng.normal();
        const auto q = forward_transition(spec, eps, u);
        CHECK(std::abs(kernel.eval(y, u) - std::exp(q.log_density(y))) < 1e-8);
    }
}

TEST_CASE("transported kernel: affine closed form for the v0=4 base") {
    ForwardDiffusionSpec spec;
    const double v0 = 4.0;
    const double h = 0.5;
    const double eps = spec.eps_of_h(h);
    const auto score = std::make_shared<MixtureScoreField>(
        GaussianMixtureLaw::single(Eigen::VectorXd::Zero(1),
                                   Eigen::MatrixXd::Constant(1, 1, v0)),
        spec);
    const TransportedKernel kernel(spec, score, h, 1, 200);
    CHECK(kernel.affine());

    const double scale = std::sqrt(gaussian_sigma_t(v0, eps) / v0);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        Eigen::VectorXd y(1), u(1);
        y << rng.uniform(-3.0, 3.0);
        u << rng.uniform(-3.0, 3.0);
        const auto q = forward_transition(spec, eps, u);
        Eigen::VectorXd back(1);
        back << y[0] * scale;
        const double expected = std::exp(q.log_density(back)) * scale;
        CHECK(kernel.eval(y, u) == doctest::Approx(expected).epsilon(1e-5));
    }
}

TEST_CASE("transported kernel: affine fast path agrees with the integrated flow") {
    // Two identical components describe the same single-Gaussian geometry but
    // disable the affine shortcut, exercising the RK4 path.
    ForwardDiffusionSpec spec;
    const double v0 = 4.0;
    GaussianMixtureLaw dup;
    dup.components.push_back(
        {0.5, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, v0)});
    dup.components.push_back(
        {0.5, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, v0)});
    const auto slow_score = std::make_shared<MixtureScoreField>(dup, spec);
    const auto fast_score = std::make_shared<MixtureScoreField>(
        GaussianMixtureLaw::single(Eigen::VectorXd::Zero(1),
                                   Eigen::MatrixXd::Constant(1, 1, v0)),
        spec);
    const double h = 0.4;
    const TransportedKernel slow(spec, slow_score, h, 1, 200);
    const TransportedKernel fast(spec, fast_score, h, 1, 200);
    CHECK_FALSE(slow.affine());
    CHECK(fast.affine());
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd y(1), u(1);
        y << rng.uniform(-2.0, 2.0);
        u << rng.uniform(-2.0, 2.0);
        CHECK(slow.eval(y, u) == doctest::Approx(fast.eval(y, u)).epsilon(1e-6));
    }
}

TEST_CASE("transported kernel: normalization under a mixture geometry") {
    ForwardDiffusionSpec spec;
    const auto score = std::make_shared<MixtureScoreField>(bimodal_1d(), spec);
    const TransportedKernel kernel(spec, score, 0.4, 1);
    const Grid grid = line_grid(-8.0, 8.0, 400);
    for (const double u0 : {-1.0, 0.0, 1.3}) {
        const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, u0);
        double mass = 0.0;
        for (Eigen::Index g = 0; g < grid.size(); ++g) {
            mass += grid.weights[g] * kernel.eval(grid.points.row(g).transpose(), u);
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("transported kernel: gradient matches finite differences") {
    ForwardDiffusionSpec spec;
    const auto score = std::make_shared<MixtureScoreField>(bimodal_1d(), spec);
    const TransportedKernel kernel(spec, score, 0.4, 1);
    Rng rng(7);
    for (int i = 0; i < 15; ++i) {
        Eigen::VectorXd y(1), u(1);
        y << rng.uniform(-2.0, 2.0);
        u << rng.uniform(-2.0, 2.0);
        const double step = 1e-4 * kernel.scale();
        Eigen::VectorXd hi = y, lo = y;
        hi[0] += step;
        lo[0] -= step;
        const double fd = (kernel.eval(hi, u) - kernel.eval(lo, u)) / (2.0 * step);
        const double g = kernel.grad(y, u)[0];
        CHECK(std::abs(g - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("transported kernel: sampling is deterministic and matches eval moments") {
    ForwardDiffusionSpec spec;
    const double h = 0.5;
    const TransportedKernel kernel(spec, standard_normal_score(2), h, 2);
    const double alpha = spec.alpha(spec.eps_of_h(h));
    Eigen::VectorXd u(2);
    u << 1.5, -0.5;

    Rng a(8), b(8);
    const Eigen::MatrixXd sa = kernel.sample(u, 10000, a);
    const Eigen::MatrixXd sb = kernel.sample(u, 10000, b);
    CHECK((sa - sb).cwiseAbs().maxCoeff() == 0.0);

    const double se = std::sqrt(1.0 - alpha * alpha) / std::sqrt(10000.0);
    for (Eigen::Index j = 0; j < 2; ++j) {
        CHECK(std::abs(sa.col(j).mean() - alpha * u[j]) < 3.0 * se);
    }
}

TEST_CASE("gaussian kernels: peak value, iso/aniso agreement, square integral") {
    const IsotropicGaussianKernel iso(1.0, 1);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    CHECK(iso.eval(z, z) == doctest::Approx(0.3989422804014327).epsilon(1e-10));

    const double h = 0.3;
    const IsotropicGaussianKernel iso2(h, 2);
    const AnisotropicGaussianKernel aniso(h * h * Eigen::MatrixXd::Identity(2, 2));
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd y(2), u(2);
        y << rng.normal(), rng.normal();
        u << rng.normal(), rng.normal();
        CHECK(iso2.eval(y, u) == doctest::Approx(aniso.eval(y, u)).epsilon(1e-12));
        CHECK((iso2.grad(y, u) - aniso.grad(y, u)).norm() < 1e-10);
    }

    // int N(y; u, Sigma)^2 dy = (4 pi)^{-d/2} det(Sigma)^{-1/2}, d = 2.
    Eigen::MatrixXd S(2, 2);
    S << 0.5, 0.1, 0.1, 0.3;
    const AnisotropicGaussianKernel k(S);
    const Grid grid = square_grid(-4.0, 4.0, 120);
    const Eigen::VectorXd u = Eigen::VectorXd::Zero(2);
    double sq = 0.0;
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const double v = k.eval(grid.points.row(g).transpose(), u);
        sq += grid.weights[g] * v * v;
    }
    const double expected = std::pow(4.0 * M_PI, -1.0) / std::sqrt(S.determinant());
    CHECK(sq == doctest::Approx(expected).epsilon(1e-3));
}

TEST_CASE("gaussian kernels: non-SPD covariance is rejected") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(AnisotropicGaussianKernel{bad}, std::invalid_argument);
    CHECK_THROWS_AS(IsotropicGaussianKernel(-0.1, 2), std::invalid_argument);
}

TEST_CASE("kernel moments: identity flow recovers the transition covariance") {
    ForwardDiffusionSpec spec;
    const double h = 0.6;
    const TransportedKernel kernel(spec, standard_normal_score(2), h, 2);
    const double var = 1.0 - std::pow(spec.alpha(spec.eps_of_h(h)), 2.0);
    const auto m = kernel_moments(kernel, Eigen::VectorXd::Zero(2), 40000, SeedPolicy{11});
    for (Eigen::Index j = 0; j < 2; ++j) {
        CHECK(m.covariance(j, j) == doctest::Approx(var).epsilon(0.05));
        CHECK(m.precision(j, j) == doctest::Approx(1.0 / var).epsilon(0.05));
    }
    CHECK(std::abs(m.covariance(0, 1)) < 0.05 * var);

    const auto again = kernel_moments(kernel, Eigen::VectorXd::Zero(2), 40000, SeedPolicy{11});
    CHECK((m.covariance - again.covariance).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kernel moments: degenerate covariance trips the SPD floor") {
    Eigen::MatrixXd S(2, 2);
    S << 1.0, 0.0, 0.0, 1e-30;
    const AnisotropicGaussianKernel k(S);
    CHECK_THROWS_AS(kernel_moments(k, Eigen::VectorXd::Zero(2), 500, SeedPolicy{0}),
                    std::runtime_error);
}

TEST_CASE("peakiness: slopes separate anisotropic and isotropic kernels") {
    const Grid grid = square_grid(-3.0, 3.0, 64);
    Rng rng(12);
    Eigen::MatrixXd samples(200, 2);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        samples(i, 0) = rng.uniform(-1.0, 1.0);
        samples(i, 1) = rng.uniform(-1.0, 1.0);
    }
    const std::vector<double> hs = {0.2, 0.25, 0.3, 0.4, 0.5};

    const KernelFactory aniso = [](double h) -> std::unique_ptr<SmoothingKernel> {
        Eigen::MatrixXd S = Eigen::MatrixXd::Identity(2, 2);
        S(0, 0) = h * h;
        return std::make_unique<AnisotropicGaussianKernel>(S);
    };
    const KernelFactory iso = [](double h) -> std::unique_ptr<SmoothingKernel> {
        return std::make_unique<IsotropicGaussianKernel>(h, 2);
    };

    const auto ra = peakiness(aniso, hs, samples, grid, false, 2);
    const auto ri = peakiness(iso, hs, samples, grid, false, 2);
    CHECK(ra.slope == doctest::Approx(1.0).epsilon(0.1));
    CHECK(ri.slope == doctest::Approx(2.0).epsilon(0.05));

    // Closed form for the anisotropic family: H = (4 pi)^{-1} / h.
    for (std::size_t i = 0; i < hs.size(); ++i) {
        CHECK(ra.H[i] == doctest::Approx(1.0 / (4.0 * M_PI * hs[i])).epsilon(0.05));
    }

    // d_eff follows its defining ratio.
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const double expect = std::log(std::max(ri.H[i], 1.0)) / std::log(1.0 / hs[i]);
        CHECK(ri.d_eff[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("peakiness: monotone in the region and needs two scales") {
    const Grid full = square_grid(-3.0, 3.0, 48);
    const Grid sub = square_grid(-1.0, 1.0, 16);
    Eigen::MatrixXd samples = Eigen::MatrixXd::Zero(50, 2);
    const KernelFactory iso = [](double h) -> std::unique_ptr<SmoothingKernel> {
        return std::make_unique<IsotropicGaussianKernel>(h, 2);
    };
    const std::vector<double> hs = {0.3, 0.5};
    const auto rf = peakiness(iso, hs, samples, full, false);
    const auto rs = peakiness(iso, hs, samples, sub, false);
    for (std::size_t i = 0; i < hs.size(); ++i) CHECK(rs.H[i] <= rf.H[i] + 1e-12);

    CHECK_THROWS_AS(peakiness(iso, {0.3, 0.3}, samples, full, false), std::invalid_argument);
    CHECK_THROWS_AS(peakiness(iso, {0.3}, samples, full, false), std::invalid_argument);
}

TEST_CASE("peakiness: score variant reports the gradient functional") {
    const Grid grid = line_grid(-3.0, 3.0, 200);
    Eigen::MatrixXd samples = Eigen::MatrixXd::Zero(20, 1);
    const KernelFactory iso = [](double h) -> std::unique_ptr<SmoothingKernel> {
        return std::make_unique<IsotropicGaussianKernel>(h, 1);
    };
    const auto r = peakiness(iso, {0.3, 0.5}, samples, grid, true);
    REQUIRE(r.Hs.size() == 2);
    // int (kappa + |grad kappa|^2) over y for N(0, h^2):
    // |grad N|^2 integrates to (4 pi)^{-1/2} h^{-3} / 2.
    for (std::size_t i = 0; i < 2; ++i) {
        const double h = r.h[i];
        const double base = std::pow(4.0 * M_PI, -0.5) / h;
        const double grad_term = base / (2.0 * h * h);
        CHECK(r.Hs[i] == doctest::Approx(base + grad_term).epsilon(0.01));
    }
}

TEST_CASE("local geometry proxy: ridge, alignment, and full-arm covariance") {
    // Zero scatter: covariance is exactly ridge * I.
    Eigen::MatrixXd same = Eigen::MatrixXd::Zero(10, 2);
    same.rowwise() = Eigen::RowVector2d(0.3, -0.2);
    const auto ridge_only = fit_pca_proxy(same, Eigen::Vector2d(0.0, 0.0), 5, 0.01);
    CHECK((ridge_only - 0.01 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);

    // Points on a line segment: leading eigenvector within 5 degrees.
    const Eigen::Vector2d dir = Eigen::Vector2d(1.0, 2.0).normalized();
    Rng rng(13);
    Eigen::MatrixXd line(60, 2);
    for (Eigen::Index i = 0; i < 60; ++i) {
        line.row(i) = (rng.uniform(-1.0, 1.0) * dir).transpose();
    }
    const auto cov = fit_pca_proxy(line, Eigen::Vector2d(0.0, 0.0), 40, 1e-3);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::Vector2d lead = es.eigenvectors().col(1);
    CHECK(std::abs(lead.dot(dir)) > std::cos(5.0 * M_PI / 180.0));
    CHECK(es.eigenvalues().minCoeff() >= 1e-3 - 1e-15);

    // k_nn = full sample: equals the full empirical covariance plus ridge.
    Eigen::MatrixXd pts(4, 2);
    pts << 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 1.0, 2.0;
    const auto full = fit_pca_proxy(pts, Eigen::Vector2d(0.5, 1.0), 4, 0.05);
    const Eigen::MatrixXd centered = pts.rowwise() - pts.colwise().mean();
    const Eigen::MatrixXd expected =
        centered.transpose() * centered / 4.0 + 0.05 * Eigen::MatrixXd::Identity(2, 2);
    CHECK((full - expected).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(fit_pca_proxy(pts, Eigen::Vector2d(0.0, 0.0), 5, 0.01),
                    std::invalid_argument);
}

TEST_CASE("local geometry kernel: evaluation delegates to the nearest anchor") {
    Rng rng(14);
    Eigen::MatrixXd outcomes(300, 2);
    for (Eigen::Index i = 0; i < 300; ++i) {
        outcomes(i, 0) = rng.normal();
        outcomes(i, 1) = 0.05 * rng.normal();
    }
    const double h = 0.2;
    const Grid grid = square_grid(-2.0, 2.0, 6);
    const LocalGeometryKernel kernel(h, outcomes, grid, 25, 1e-3);
    const Eigen::VectorXd y = grid.points.row(7).transpose();
    const auto& local = kernel.local(y);
    CHECK(kernel.eval(y, Eigen::VectorXd::Zero(2)) ==
          local.eval(y, Eigen::VectorXd::Zero(2)));
    // Widths cap at the bandwidth along every axis.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(local.covariance());
    CHECK(es.eigenvalues().maxCoeff() <= h * h + 1e-12);
}

TEST_CASE("local geometry kernel: transported-matched covariance on the full arm") {
    // With k_nn equal to the arm size the proxy is the full empirical
    // covariance plus ridge, so the kernel covariance is exactly
    // h^2 Sigma (Sigma + h^2 I)^{-1}: h-wide along diffuse directions,
    // data-wide along tight ones.
    Rng rng(19);
    Eigen::MatrixXd outcomes(400, 2);
    for (Eigen::Index i = 0; i < 400; ++i) {
        outcomes(i, 0) = rng.normal();
        outcomes(i, 1) = 0.04 * rng.normal();
    }
    const double h = 0.3;
    const double ridge = 1e-4;
    const Grid grid = square_grid(-0.5, 0.5, 2);
    const LocalGeometryKernel kernel(h, outcomes, grid, 400, ridge);

    const Eigen::MatrixXd centered = outcomes.rowwise() - outcomes.colwise().mean();
    Eigen::MatrixXd sigma = centered.transpose() * centered / 400.0;
    sigma += ridge * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd expected =
        h * h * sigma *
        (sigma + h * h * Eigen::MatrixXd::Identity(2, 2)).inverse();
    const auto& local = kernel.local(Eigen::Vector2d(0.0, 0.0));
    CHECK((local.covariance() - expected).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(local.covariance());
    // Tight axis stays near the data width, far below h.
    CHECK(std::sqrt(es.eigenvalues().minCoeff()) < 2.5 * 0.04);
    // Diffuse axis contracts at the bandwidth scale.
    CHECK(es.eigenvalues().maxCoeff() > 0.5 * h * h);
    CHECK(es.eigenvalues().maxCoeff() <= h * h + 1e-12);
}

TEST_CASE("score fields: perturbations scale as advertised") {
    const auto base = standard_normal_score(2);
    const auto same = perturb_score(base, 0.0, PerturbMode::LinearTilt, 2);
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd z(2);
        z << rng.normal(), rng.normal();
        CHECK((same->eval(z, 0.1) - base->eval(z, 0.1)).norm() == 0.0);
    }
    const auto tilt = perturb_score(base, 0.1, PerturbMode::LinearTilt, 2);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    CHECK((tilt->eval(zero, 0.2) - base->eval(zero, 0.2)).norm() ==
          doctest::Approx(0.1).epsilon(1e-12));
}
