#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "cfgeo/batch.hpp"
#include "cfgeo/crossfit.hpp"
#include "cfgeo/region.hpp"
#include "cfgeo/rng.hpp"

using namespace cfgeo;

namespace {

ObservationBatch tiny_batch() {
    ObservationBatch b;
    b.x = Eigen::MatrixXd(3, 2);
    b.x << 0.1, -0.2, 1.5, 0.3, -0.7, 2.25;
    b.a = Eigen::VectorXi(3);
    b.a << 1, 0, 1;
    b.y = Eigen::MatrixXd(3, 2);
    b.y << 0.5, 0.25, -1.125, 0.0, 2.0, -3.5;
    b.labels = {0, 1};
    return b;
}

}  // namespace

TEST_CASE("rng: identical (seed, label) pairs give bit-identical streams") {
    SeedPolicy sp{42};
    Rng a = sp.stream("data");
    Rng b = sp.stream("data");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: distinct labels give distinct streams") {
    SeedPolicy sp{42};
    Rng a = sp.stream("data");
    Rng b = sp.stream("folds");
    int differ = 0;
    for (int i = 0; i < 10; ++i) differ += a.next_u64() != b.next_u64();
    CHECK(differ > 0);
}

TEST_CASE("rng: uniform lies in [0,1) and normal draws are reasonable") {
    Rng rng(7);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
    }
    CHECK(std::abs(sum / n) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("crossfit: n=10 folds=5 gives exactly 2 units per fold") {
    const auto plan = make_crossfit_plan(10, 5, SeedPolicy{1});
    for (int f = 0; f < 5; ++f) CHECK(plan.fold_members(f).size() == 2);
}

TEST_CASE("crossfit: n=7 folds=2 gives sizes {3,4}") {
    const auto plan = make_crossfit_plan(7, 2, SeedPolicy{1});
    const auto s0 = plan.fold_members(0).size();
    const auto s1 = plan.fold_members(1).size();
    CHECK(s0 + s1 == 7);
    CHECK(std::max(s0, s1) == 4);
}

TEST_CASE("crossfit: plan is a partition and deterministic in the seed") {
    const auto plan = make_crossfit_plan(103, 4, SeedPolicy{9});
    std::set<std::size_t> seen;
    for (int f = 0; f < 4; ++f) {
        for (const auto u : plan.fold_members(f)) seen.insert(u);
    }
    CHECK(seen.size() == 103);
    const auto again = make_crossfit_plan(103, 4, SeedPolicy{9});
    CHECK(plan.assignment == again.assignment);
    const auto other = make_crossfit_plan(103, 4, SeedPolicy{10});
    CHECK(plan.assignment != other.assignment);
}

TEST_CASE("crossfit: n < folds is rejected") {
    CHECK_THROWS_AS(make_crossfit_plan(3, 5, SeedPolicy{0}), std::invalid_argument);
    CHECK_THROWS_AS(make_crossfit_plan(10, 1, SeedPolicy{0}), std::invalid_argument);
}

TEST_CASE("grid: 1-d midpoint rule on [0,1] with 4 points") {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Zero(1);
    region.upper = Eigen::VectorXd::Ones(1);
    region.grid_points_per_axis = 4;
    const Grid grid = make_grid(region);
    REQUIRE(grid.size() == 4);
    for (Eigen::Index g = 0; g < 4; ++g) {
        CHECK(grid.weights[g] == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(grid.points(g, 0) == doctest::Approx(0.125 + 0.25 * g).epsilon(1e-14));
    }
    CHECK(grid.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grid: weight sums equal the region volume") {
    EvaluationRegion unit2;
    unit2.lower = Eigen::VectorXd::Zero(2);
    unit2.upper = Eigen::VectorXd::Ones(2);
    unit2.grid_points_per_axis = 10;
    const Grid g1 = make_grid(unit2);
    CHECK(g1.size() == 100);
    CHECK(g1.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));

    EvaluationRegion box;
    box.lower = Eigen::VectorXd::Constant(2, -2.0);
    box.upper = Eigen::VectorXd::Constant(2, 2.0);
    box.grid_points_per_axis = 8;
    const Grid g2 = make_grid(box);
    CHECK(g2.size() == 64);
    CHECK(g2.weights.sum() == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("grid: fingerprints distinguish different grids") {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Zero(1);
    region.upper = Eigen::VectorXd::Ones(1);
    region.grid_points_per_axis = 4;
    const Grid a = make_grid(region);
    region.grid_points_per_axis = 5;
    const Grid b = make_grid(region);
    CHECK(a.fingerprint() != b.fingerprint());
    region.grid_points_per_axis = 4;
    CHECK(make_grid(region).fingerprint() == a.fingerprint());
}

TEST_CASE("region: invalid boxes and projections are rejected") {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Ones(1);
    region.upper = Eigen::VectorXd::Zero(1);
    region.grid_points_per_axis = 4;
    CHECK_THROWS_AS(region.validate(), std::invalid_argument);
    region.lower = Eigen::VectorXd::Zero(1);
    region.upper = Eigen::VectorXd::Ones(1);
    region.grid_points_per_axis = 1;
    CHECK_THROWS_AS(region.validate(), std::invalid_argument);
    region.grid_points_per_axis = 4;
    region.projection = Eigen::MatrixXd::Identity(2, 3);  // row count must equal dim
    CHECK_THROWS_AS(region.validate(), std::invalid_argument);
}

TEST_CASE("region: projection maps ambient outcomes to evaluation coordinates") {
    EvaluationRegion region;
    region.lower = Eigen::VectorXd::Zero(1);
    region.upper = Eigen::VectorXd::Ones(1);
    region.grid_points_per_axis = 2;
    Eigen::MatrixXd proj(1, 3);
    proj << 0.0, 1.0, 0.0;
    region.projection = proj;
    Eigen::VectorXd ambient(3);
    ambient << 5.0, -2.0, 7.0;
    CHECK(region.project_point(ambient)[0] == -2.0);
}

TEST_CASE("region: bounding box expands by the margin per side") {
    Eigen::MatrixXd pts(2, 1);
    pts << 0.0, 10.0;
    const auto region = bounding_region(pts, 4, 0.10);
    CHECK(region.lower[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(region.upper[0] == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("batch: invariant violations are rejected") {
    ObservationBatch b = tiny_batch();
    CHECK_NOTHROW(b.validate());

    ObservationBatch bad = b;
    bad.y(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = b;
    bad.a[0] = 7;  // not in the declared label set
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = b;
    bad.x = Eigen::MatrixXd::Zero(2, 2);  // row count mismatch
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("batch: arm_indices picks exactly the arm's rows") {
    const ObservationBatch b = tiny_batch();
    const auto idx = b.arm_indices(1);
    REQUIRE(idx.size() == 2);
    CHECK(idx[0] == 0);
    CHECK(idx[1] == 2);
}

TEST_CASE("batch: CSV round trip is exact") {
    const ObservationBatch b = tiny_batch();
    const auto path = (std::filesystem::temp_directory_path() / "cfgeo_batch_rt.csv").string();
    write_observations_csv(b, path);
    const ObservationBatch back = read_observations_csv(path);
    CHECK(back.n() == b.n());
    CHECK(back.k() == b.k());
    CHECK(back.d() == b.d());
    CHECK((back.x - b.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.y - b.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.a == b.a);
    std::remove(path.c_str());
}
