#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cfgeo/synthlab.hpp"

using namespace cfgeo;

namespace {

Grid line_grid(double lo, double hi, int points) {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Constant(1, lo);
    region.upper = Eigen::VectorXd::Constant(1, hi);
    region.grid_points_per_axis = points;
    return make_grid(region);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("presets: every shipped DGP passes the positivity audit") {
    for (const auto& name : dgp_preset_names()) {
        const auto dgp = dgp_preset(name);
        const double min_pi = dgp.positivity_audit(100000, SeedPolicy{1});
        CHECK(min_pi >= dgp.declared_pi_min);
    }
    CHECK_THROWS_AS(dgp_preset("no-such-preset"), std::invalid_argument);
}

TEST_CASE("generate: deterministic and faithful to the DGP moments") {
    const auto dgp = dgp_preset("gauss2d");
    const auto a = generate(dgp, 10000, SeedPolicy{2});
    const auto b = generate(dgp, 10000, SeedPolicy{2});
    CHECK((a.y - b.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.a == b.a);

    // Arm-conditional outcome mean: E{Y | A=1} should match the DGP formula
    // E{base_mean + loading X | A=1} estimated from the same draws of X.
    const auto arm = a.arm_indices(1);
    Eigen::VectorXd emp = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd model = Eigen::VectorXd::Zero(2);
    for (const auto i : arm) {
        emp += a.y.row(i).transpose();
        model += dgp.arms.at(1)[0].base_mean +
                 dgp.arms.at(1)[0].loading * a.x.row(i).transpose();
    }
    emp /= static_cast<double>(arm.size());
    model /= static_cast<double>(arm.size());
    const double se = 1.0 / std::sqrt(static_cast<double>(arm.size()));
    CHECK((emp - model).cwiseAbs().maxCoeff() < 3.0 * se);
}

TEST_CASE("generate: unconfounded preset has treatment independent of x") {
    auto dgp = dgp_preset("gauss2d");
    dgp.logit_coef.tail(dgp.k).setZero();
    const auto batch = generate(dgp, 10000, SeedPolicy{3});
    for (Eigen::Index j = 0; j < batch.k(); ++j) {
        const Eigen::VectorXd xj = batch.x.col(j);
        const Eigen::VectorXd aa = batch.a.cast<double>();
        const double corr = (xj.array() - xj.mean()).matrix().dot(
                                (aa.array() - aa.mean()).matrix()) /
                            static_cast<double>(batch.n());
        CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(batch.n())));
    }
}

TEST_CASE("projection: ambient outcomes map to evaluation coordinates") {
    const auto dgp = dgp_preset("ambient10");
    const auto batch = generate(dgp, 100, SeedPolicy{4});
    const auto projected = project_outcomes(dgp, batch);
    CHECK(projected.d() == 2);
    CHECK(projected.y.col(0).isApprox(batch.y.col(0)));
    CHECK(projected.y.col(1).isApprox(batch.y.col(3)));
    CHECK(evaluation_law(dgp, 1).dim() == 2);
}

TEST_CASE("population density: point-mass law reduces to the kernel itself") {
    GaussianMixtureLaw dirac;
    dirac.components.push_back({1.0, Eigen::VectorXd::Constant(1, 0.7),
                                Eigen::MatrixXd::Constant(1, 1, 1e-16)});
    const IsotropicGaussianKernel kernel(0.5, 1);
    const Grid grid = line_grid(-2.0, 2.0, 9);
    const Eigen::VectorXd p = population_density(dirac, kernel, grid);
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const double expect =
            kernel.eval(grid.points.row(g).transpose(), Eigen::VectorXd::Constant(1, 0.7));
        CHECK(p[g] == doctest::Approx(expect).epsilon(1e-8));
    }
}

TEST_CASE("population density: Gaussian convolution matches direct quadrature") {
    GaussianMixtureLaw law;
    law.components.push_back({0.6, Eigen::VectorXd::Constant(1, -0.5),
                              Eigen::MatrixXd::Constant(1, 1, 0.8)});
    law.components.push_back({0.4, Eigen::VectorXd::Constant(1, 1.0),
                              Eigen::MatrixXd::Constant(1, 1, 0.3)});
    const IsotropicGaussianKernel kernel(0.4, 1);
    const Grid grid = line_grid(-1.5, 1.5, 7);
    const Eigen::VectorXd p = population_density(law, kernel, grid);

    // Independent u-quadrature of int kappa(y; u) dP(u).
    const Grid uq = line_grid(-8.0, 8.0, 2000);
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const Eigen::VectorXd y = grid.points.row(g).transpose();
        double acc = 0.0;
        for (Eigen::Index j = 0; j < uq.size(); ++j) {
            const Eigen::VectorXd u = uq.points.row(j).transpose();
            acc += uq.weights[j] * kernel.eval(y, u) * law.density(u);
        }
        CHECK(p[g] == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("population density: integrates to one and the score vanishes at the mode") {
    const auto dgp = dgp_preset("mix1d");
    const IsotropicGaussianKernel kernel(0.4, 1);
    const Grid wide = line_grid(-10.0, 10.0, 600);
    const Eigen::VectorXd p = population_density(evaluation_law(dgp, 1), kernel, wide);
    CHECK(p.dot(wide.weights) == doctest::Approx(1.0).epsilon(1e-3));

    // A law symmetric about 0 has smoothed score 0 at the center.
    GaussianMixtureLaw sym;
    sym.components.push_back({0.5, Eigen::VectorXd::Constant(1, -1.0),
                              Eigen::MatrixXd::Constant(1, 1, 0.4)});
    sym.components.push_back({0.5, Eigen::VectorXd::Constant(1, 1.0),
                              Eigen::MatrixXd::Constant(1, 1, 0.4)});
    const Grid center = line_grid(-1e-9, 1e-9, 2);
    const Eigen::MatrixXd s = population_score(sym, kernel, center);
    CHECK(std::abs(s(0, 0)) < 1e-6);
}

TEST_CASE("population density: transported kernel oracle agrees with quadrature") {
    ForwardDiffusionSpec spec;
    GaussianMixtureLaw geometry;
    geometry.components.push_back({0.5, Eigen::VectorXd::Constant(1, -1.0),
                                   Eigen::MatrixXd::Constant(1, 1, 0.4)});
    geometry.components.push_back({0.5, Eigen::VectorXd::Constant(1, 1.0),
                                   Eigen::MatrixXd::Constant(1, 1, 0.4)});
    const auto score = std::make_shared<MixtureScoreField>(geometry, spec);
    const TransportedKernel kernel(spec, score, 0.5, 1);

    GaussianMixtureLaw law;
    law.components.push_back({1.0, Eigen::VectorXd::Constant(1, 0.3),
                              Eigen::MatrixXd::Constant(1, 1, 0.5)});
    const Grid grid = line_grid(-1.0, 1.0, 3);
    const Eigen::VectorXd p = population_density(law, kernel, grid);

    const Grid uq = line_grid(-8.0, 8.0, 1200);
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const Eigen::VectorXd y = grid.points.row(g).transpose();
        double acc = 0.0;
        for (Eigen::Index j = 0; j < uq.size(); ++j) {
            const Eigen::VectorXd u = uq.points.row(j).transpose();
            acc += uq.weights[j] * kernel.eval(y, u) * law.density(u);
        }
        CHECK(p[g] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("ise: quadrature algebra") {
    const Grid grid = line_grid(0.0, 2.0, 8);  // volume 2
    Eigen::VectorXd target(8), est(8);
    for (Eigen::Index g = 0; g < 8; ++g) {
        target[g] = std::sin(static_cast<double>(g));
        est[g] = target[g];
    }
    CHECK(ise(est, target, grid) == 0.0);

    est = target.array() + 0.3;
    CHECK(ise(est, target, grid) == doctest::Approx(0.09 * 2.0).epsilon(1e-12));

    // Hand quadrature of a known pair.
    Eigen::VectorXd other = target;
    other[3] += 1.5;
    CHECK(ise(other, target, grid) == doctest::Approx(grid.weights[3] * 2.25).epsilon(1e-12));

    CHECK_THROWS_AS(ise(Eigen::VectorXd::Zero(5), target, grid), std::invalid_argument);
}

TEST_CASE("rate slope: exact power laws and input validation") {
    const std::vector<double> n = {100.0, 400.0, 1600.0, 6400.0};
    std::vector<double> err;
    for (const double v : n) err.push_back(std::pow(v, -0.8));
    const auto curve = rate_slope(n, err);
    CHECK(curve.slope == doctest::Approx(-0.8).epsilon(1e-12));

    const std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
    CHECK(rate_slope(n, flat).slope == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(rate_slope({100.0, 200.0}, {0.1, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(rate_slope(n, {0.1, 0.0, 0.1, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(rate_slope({100.0, 50.0, 200.0, 400.0}, err), std::invalid_argument);
}

TEST_CASE("drift diagnostic: zero perturbation gives zero drift") {
    ForwardDiffusionSpec spec;
    const auto base = std::make_shared<MixtureScoreField>(
        GaussianMixtureLaw::standard_normal(1), spec);
    const PerturbedKernelFactory factory =
        [&](double h, double eps) -> std::unique_ptr<SmoothingKernel> {
        const auto field = perturb_score(base, eps, PerturbMode::LinearTilt, 1);
        return std::make_unique<TransportedKernel>(spec, field, h, 1);
    };
    Rng rng{SeedPolicy{5}.derive("law")};
    Eigen::MatrixXd samples(30, 1);
    for (Eigen::Index i = 0; i < 30; ++i) samples(i, 0) = rng.normal();
    const Grid grid = line_grid(-3.0, 3.0, 40);
    const auto report =
        drift_diagnostic(factory, {0.3, 0.5}, {0.0, 0.1}, samples, grid, 2);
    CHECK(report.drift(0, 0) < 1e-10);
    CHECK(report.drift(1, 0) < 1e-10);
    CHECK(report.drift(0, 1) > 1e-4);
    const auto csv = report.to_csv();
    CHECK(csv.rfind("h,eps,drift\n", 0) == 0);
}

TEST_CASE("experiment: a degenerate config yields one curve point, bitwise stable") {
    const auto dir = std::filesystem::temp_directory_path() / "cfgeo_exp_test";
    std::filesystem::remove_all(dir);
    const std::string config = R"({
        "preset": "gauss2d",
        "estimators": ["plugin-iso"],
        "n": [400],
        "replications": 1,
        "grid_points_per_axis": 5,
        "seed": 11
    })";
    const auto manifest = run_experiment(config, (dir / "a").string(), 2);
    CHECK(manifest.find("\"config_hash\"") != std::string::npos);
    const auto curves = slurp(dir / "a" / "curves.csv");
    // Header plus exactly one data line.
    CHECK(std::count(curves.begin(), curves.end(), '\n') == 2);
    CHECK(curves.rfind("estimator,n,h,error,error_se,replications\n", 0) == 0);

    run_experiment(config, (dir / "b").string(), 1);
    CHECK(slurp(dir / "b" / "curves.csv") == curves);
    std::filesystem::remove_all(dir);
}

TEST_CASE("experiment: unknown config keys are rejected") {
    const auto dir = std::filesystem::temp_directory_path() / "cfgeo_exp_bad";
    CHECK_THROWS_WITH_AS(
        run_experiment(R"({"preset": "gauss2d", "estimators": [], "n": [100],
                           "no_such_key": 1})",
                       dir.string(), 1),
        doctest::Contains("no_such_key"), ConfigError);
    std::filesystem::remove_all(dir);
}
