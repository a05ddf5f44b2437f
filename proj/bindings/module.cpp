#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <stdexcept>
#include <string>

#include "cfgeo/estimators.hpp"
#include "cfgeo/inference.hpp"
#include "cfgeo/kernels.hpp"
#include "cfgeo/nuisance.hpp"
#include "cfgeo/score_field.hpp"
#include "cfgeo/synthlab.hpp"

namespace py = pybind11;
using namespace cfgeo;

namespace {

ObservationBatch make_batch(const Eigen::MatrixXd& x, const Eigen::VectorXi& a,
                            const Eigen::MatrixXd& y) {
    ObservationBatch batch;
    batch.x = x;
    batch.a = a;
    batch.y = y;
    batch.labels = {0, 1};
    batch.validate();
    return batch;
}

Grid make_box_grid(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, int per_axis) {
    EvaluationRegion region;
    region.lower = lower;
    region.upper = upper;
    region.grid_points_per_axis = per_axis;
    return make_grid(region);
}

std::unique_ptr<SmoothingKernel> make_kernel(const std::string& type, double h, Eigen::Index d,
                                             const std::string& preset, int arm) {
    if (type == "iso") return std::make_unique<IsotropicGaussianKernel>(h, d);
    if (type == "transported") {
        const ForwardDiffusionSpec spec;
        const auto law = evaluation_law(dgp_preset(preset), arm);
        return std::make_unique<TransportedKernel>(
            spec, std::make_shared<MixtureScoreField>(law, spec), h, d);
    }
    throw std::invalid_argument("unknown kernel type: " + type);
}

CrossFitNuisance fit_nuisance(const ObservationBatch& batch, int arm,
                              const SmoothingKernel& kernel, const Grid& grid, int folds,
                              std::uint64_t seed, double clip, bool with_grad, int workers) {
    const auto plan = make_crossfit_plan(static_cast<std::size_t>(batch.n()), folds,
                                         SeedPolicy{seed});
    NuisanceOptions options;
    options.clip = clip;
    options.with_grad = with_grad;
    return fit_localized_regressions(batch, arm, plan, kernel, grid, options, workers);
}

py::dict grid_dict(const Grid& grid) {
    py::dict out;
    out["points"] = grid.points;
    out["weights"] = grid.weights;
    return out;
}

}  // namespace

PYBIND11_MODULE(_cfgeo, m) {
    m.doc() = "Geometry-adaptive counterfactual distribution estimation";

    m.def("preset_names", &dgp_preset_names, "Names of the built-in synthetic DGP presets.");

    m.def(
        "simulate",
        [](const std::string& preset, Eigen::Index n, std::uint64_t seed, bool project) {
            const auto dgp = dgp_preset(preset);
            auto batch = generate(dgp, n, SeedPolicy{seed});
            if (project) batch = project_outcomes(dgp, batch);
            py::dict out;
            out["x"] = batch.x;
            out["a"] = batch.a;
            out["y"] = batch.y;
            return out;
        },
        py::arg("preset"), py::arg("n"), py::arg("seed") = 1, py::arg("project") = true,
        "Draw a synthetic observational sample; outcomes in evaluation coordinates when "
        "project is true.");

    m.def(
        "population_density",
        [](const std::string& preset, int arm, const std::string& kernel_type, double h,
           const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, int points_per_axis) {
            const auto law = evaluation_law(dgp_preset(preset), arm);
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const auto kernel = make_kernel(kernel_type, h, law.dim(), preset, arm);
            py::dict out = grid_dict(grid);
            out["value"] = population_density(law, *kernel, grid);
            return out;
        },
        py::arg("preset"), py::arg("arm"), py::arg("kernel") = "iso", py::arg("h") = 0.4,
        py::arg("lower") = Eigen::VectorXd(), py::arg("upper") = Eigen::VectorXd(),
        py::arg("points_per_axis") = 15,
        "Population smoothed counterfactual density on a box grid.");

    m.def(
        "fit_dis",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXi& a, const Eigen::MatrixXd& y,
           int arm, const std::string& kernel_type, double h, const Eigen::VectorXd& lower,
           const Eigen::VectorXd& upper, int points_per_axis, const std::string& preset,
           int folds, std::uint64_t seed, double clip, int workers) {
            const auto batch = make_batch(x, a, y);
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const auto kernel = make_kernel(kernel_type, h, batch.d(), preset, arm);
            const auto nui =
                fit_nuisance(batch, arm, *kernel, grid, folds, seed, clip, false, workers);
            const auto est = dis_estimate(batch, arm, nui, *kernel, grid, workers);
            py::dict out = grid_dict(grid);
            out["value"] = Eigen::VectorXd(est.values.col(0));
            out["sigma2"] = est.sigma2;
            out["influence"] = est.influence;
            return out;
        },
        py::arg("x"), py::arg("a"), py::arg("y"), py::arg("arm"), py::arg("kernel") = "iso",
        py::arg("h") = 0.4, py::arg("lower") = Eigen::VectorXd(),
        py::arg("upper") = Eigen::VectorXd(), py::arg("points_per_axis") = 15,
        py::arg("preset") = "", py::arg("folds") = 5, py::arg("seed") = 1,
        py::arg("clip") = 0.01, py::arg("workers") = 1,
        "One-step cross-fitted estimate of the smoothed counterfactual density.");

    m.def(
        "fit_dss",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXi& a, const Eigen::MatrixXd& y,
           int arm, const std::string& kernel_type, double h, const Eigen::VectorXd& lower,
           const Eigen::VectorXd& upper, int points_per_axis, const std::string& preset,
           int folds, std::uint64_t seed, double clip, int workers) {
            const auto batch = make_batch(x, a, y);
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const auto kernel = make_kernel(kernel_type, h, batch.d(), preset, arm);
            const auto nui =
                fit_nuisance(batch, arm, *kernel, grid, folds, seed, clip, true, workers);
            const auto est = dss_estimate(batch, arm, nui, *kernel, grid, -1.0, workers);
            py::dict out = grid_dict(grid);
            out["value"] = est.values;
            out["sigma2"] = est.sigma2;
            return out;
        },
        py::arg("x"), py::arg("a"), py::arg("y"), py::arg("arm"), py::arg("kernel") = "iso",
        py::arg("h") = 0.4, py::arg("lower") = Eigen::VectorXd(),
        py::arg("upper") = Eigen::VectorXd(), py::arg("points_per_axis") = 15,
        py::arg("preset") = "", py::arg("folds") = 5, py::arg("seed") = 1,
        py::arg("clip") = 0.01, py::arg("workers") = 1,
        "One-step estimate of the smoothed counterfactual score on a grid.");

    m.def(
        "stein",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXi& a, const Eigen::MatrixXd& y,
           int arm, const std::string& kernel_type, double h, const Eigen::VectorXd& lower,
           const Eigen::VectorXd& upper, int points_per_axis, const std::string& preset,
           int folds, std::uint64_t seed, double clip, int extra, int workers) {
            const auto batch = make_batch(x, a, y);
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const auto kernel = make_kernel(kernel_type, h, batch.d(), preset, arm);
            const auto nui =
                fit_nuisance(batch, arm, *kernel, grid, folds, seed, clip, true, workers);
            py::list out;
            for (const auto& field :
                 default_test_fields(batch.d(), SeedPolicy{seed}, extra)) {
                const auto est = stein_estimate(batch, arm, nui, *kernel, grid, field, workers);
                py::dict row;
                row["g_id"] = est.g_id;
                row["value"] = est.value;
                row["sigma2"] = est.sigma2;
                out.append(row);
            }
            return out;
        },
        py::arg("x"), py::arg("a"), py::arg("y"), py::arg("arm"), py::arg("kernel") = "iso",
        py::arg("h") = 0.4, py::arg("lower") = Eigen::VectorXd(),
        py::arg("upper") = Eigen::VectorXd(), py::arg("points_per_axis") = 15,
        py::arg("preset") = "", py::arg("folds") = 5, py::arg("seed") = 1,
        py::arg("clip") = 0.01, py::arg("extra") = 4, py::arg("workers") = 1,
        "Stein discrepancy statistics for the default test-field family.");

    m.def(
        "dis_band",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXi& a, const Eigen::MatrixXd& y,
           int arm, const std::string& kernel_type, double h, const Eigen::VectorXd& lower,
           const Eigen::VectorXd& upper, int points_per_axis, const std::string& preset,
           int folds, std::uint64_t seed, double clip, double alpha, int multipliers,
           double envelope, int workers) {
            const auto batch = make_batch(x, a, y);
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const auto kernel = make_kernel(kernel_type, h, batch.d(), preset, arm);
            const auto nui =
                fit_nuisance(batch, arm, *kernel, grid, folds, seed, clip, false, workers);
            const auto est = dis_estimate(batch, arm, nui, *kernel, grid, workers);
            auto band = multiplier_band(est.influence, est.values.col(0), alpha, multipliers,
                                        SeedPolicy{SeedPolicy{seed}.derive("band")});
            if (envelope > 0.0) band = inflate_band(band, envelope);
            py::dict out = grid_dict(grid);
            out["center"] = band.center;
            out["sigma"] = band.sigma;
            out["radius"] = band.radius;
            out["lower_band"] = band.lower();
            out["upper_band"] = band.upper();
            out["c_hat"] = band.c_hat;
            return out;
        },
        py::arg("x"), py::arg("a"), py::arg("y"), py::arg("arm"), py::arg("kernel") = "iso",
        py::arg("h") = 0.4, py::arg("lower") = Eigen::VectorXd(),
        py::arg("upper") = Eigen::VectorXd(), py::arg("points_per_axis") = 15,
        py::arg("preset") = "", py::arg("folds") = 5, py::arg("seed") = 1,
        py::arg("clip") = 0.01, py::arg("alpha") = 0.05, py::arg("multipliers") = 500,
        py::arg("envelope") = 0.0, py::arg("workers") = 1,
        "Simultaneous multiplier-bootstrap band around the one-step density estimate, "
        "optionally inflated by a drift envelope.");

    m.def(
        "peakiness",
        [](const Eigen::MatrixXd& samples, const std::vector<double>& h_values,
           const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, int points_per_axis,
           bool include_score, int workers) {
            const auto grid = make_box_grid(lower, upper, points_per_axis);
            const KernelFactory factory = [d = samples.cols()](double h) {
                return std::unique_ptr<SmoothingKernel>(
                    std::make_unique<IsotropicGaussianKernel>(h, d));
            };
            const auto report =
                peakiness(factory, h_values, samples, grid, include_score, workers);
            py::dict out;
            out["h"] = report.h;
            out["H"] = report.H;
            out["Hs"] = report.Hs;
            out["d_eff"] = report.d_eff;
            out["slope"] = report.slope;
            return out;
        },
        py::arg("samples"), py::arg("h_values"), py::arg("lower"), py::arg("upper"),
        py::arg("points_per_axis") = 40, py::arg("include_score") = false,
        py::arg("workers") = 1,
        "Peakiness diagnostic (kernel L2 size across bandwidths) for the isotropic kernel.");

    m.def("run_experiment", &run_experiment, py::arg("config_json"), py::arg("out_dir"),
          py::arg("workers") = 1,
          "Run a replication experiment from a JSON config; returns the manifest JSON.");
}
