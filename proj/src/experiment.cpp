#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "cfgeo/svg.hpp"
#include "cfgeo/synthlab.hpp"

namespace cfgeo {

namespace {

using nlohmann::json;

const std::vector<std::string> kConfigKeys = {
    "name",       "preset",        "arm",           "estimators",        "n",
    "replications", "seed",        "h_c",           "h_exponent",        "alpha",
    "multipliers", "band",         "grid_points_per_axis", "region_margin", "region_n",
    "region_lower", "region_upper",
    "folds",      "k_nn",          "nuisance",      "oracle_mc",         "peakiness_h",
    "peakiness_kernels", "peakiness_samples", "drift_h", "drift_eps",    "drift_samples"};

json effective_config(const std::string& config_json) {
    json raw;
    try {
        raw = json::parse(config_json);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    // A manifest can be replayed directly: its effective config is nested.
    if (raw.contains("config") && raw.contains("config_hash")) raw = raw.at("config");

    for (const auto& item : raw.items()) {
        if (std::find(kConfigKeys.begin(), kConfigKeys.end(), item.key()) == kConfigKeys.end()) {
            throw ConfigError("unknown config key: " + item.key());
        }
    }
    for (const char* key : {"preset", "estimators", "n"}) {
        if (!raw.contains(key)) throw ConfigError(std::string("missing config key: ") + key);
    }

    json eff;
    eff["name"] = raw.value("name", std::string("experiment"));
    eff["preset"] = raw.at("preset").get<std::string>();
    eff["arm"] = raw.value("arm", 1);
    eff["estimators"] = raw.at("estimators").get<std::vector<std::string>>();
    eff["n"] = raw.at("n").get<std::vector<int>>();
    eff["replications"] = raw.value("replications", 1);
    eff["seed"] = raw.value("seed", std::uint64_t{1});
    eff["h_c"] = raw.value("h_c", 0.8);
    eff["h_exponent"] = raw.value("h_exponent", -0.2);
    eff["alpha"] = raw.value("alpha", 0.05);
    eff["multipliers"] = raw.value("multipliers", 200);
    eff["band"] = raw.value("band", false);
    eff["grid_points_per_axis"] = raw.value("grid_points_per_axis", 9);
    eff["region_margin"] = raw.value("region_margin", 0.10);
    eff["region_lower"] = raw.value("region_lower", std::vector<double>{});
    eff["region_upper"] = raw.value("region_upper", std::vector<double>{});
    eff["region_n"] = raw.value("region_n", 2000);
    eff["folds"] = raw.value("folds", 5);
    eff["k_nn"] = raw.value("k_nn", 50);
    eff["nuisance"] = raw.value("nuisance", std::string("crossfit"));
    eff["oracle_mc"] = raw.value("oracle_mc", 400);
    eff["peakiness_h"] = raw.value("peakiness_h", std::vector<double>{});
    eff["peakiness_kernels"] = raw.value("peakiness_kernels", std::vector<std::string>{"iso"});
    eff["peakiness_samples"] = raw.value("peakiness_samples", 200);
    eff["drift_h"] = raw.value("drift_h", std::vector<double>{});
    eff["drift_eps"] = raw.value("drift_eps", std::vector<double>{});
    eff["drift_samples"] = raw.value("drift_samples", 200);

    if (eff["estimators"].empty()) throw ConfigError("estimators list is empty");
    if (eff["n"].empty()) throw ConfigError("n list is empty");
    const std::string nuisance = eff["nuisance"];
    if (nuisance != "crossfit" && nuisance != "oracle") {
        throw ConfigError("nuisance must be 'crossfit' or 'oracle'");
    }
    const double alpha = eff["alpha"];
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha outside (0,1)");
    return eff;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : text) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return h;
}

struct EstimatorSpec {
    std::string kind;    // plugin | plugin-ipw | dis | dss
    std::string kernel;  // iso | local | transported
};

EstimatorSpec parse_estimator(const std::string& name) {
    const auto dash = name.rfind('-');
    if (dash == std::string::npos) throw ConfigError("unknown estimator: " + name);
    EstimatorSpec spec;
    spec.kind = name.substr(0, dash);
    spec.kernel = name.substr(dash + 1);
    const bool kind_ok = spec.kind == "plugin" || spec.kind == "plugin-ipw" ||
                         spec.kind == "dis" || spec.kind == "dss";
    const bool kernel_ok =
        spec.kernel == "iso" || spec.kernel == "local" || spec.kernel == "transported";
    if (!kind_ok || !kernel_ok) throw ConfigError("unknown estimator: " + name);
    return spec;
}

std::unique_ptr<SmoothingKernel> make_kernel(const EstimatorSpec& spec, double h,
                                             const SyntheticDGP& dgp, int arm,
                                             const ObservationBatch& eval_batch, const Grid& grid,
                                             int k_nn) {
    const auto dim = grid.dim();
    if (spec.kernel == "iso") return std::make_unique<IsotropicGaussianKernel>(h, dim);
    if (spec.kernel == "local") {
        const auto idx = eval_batch.arm_indices(arm);
        Eigen::MatrixXd arm_outcomes(static_cast<Eigen::Index>(idx.size()), dim);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            arm_outcomes.row(static_cast<Eigen::Index>(r)) = eval_batch.y.row(idx[r]);
        }
        const Eigen::RowVectorXd mean = arm_outcomes.colwise().mean();
        const Eigen::MatrixXd centered = arm_outcomes.rowwise() - mean;
        const Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(arm_outcomes.rows());
        return std::make_unique<LocalGeometryKernel>(h, arm_outcomes, grid, k_nn,
                                                     default_pca_ridge(cov));
    }
    const auto score = std::make_shared<MixtureScoreField>(evaluation_law(dgp, arm),
                                                           ForwardDiffusionSpec{});
    return std::make_unique<TransportedKernel>(score->spec(), score, h, dim);
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << content;
}

std::string fmt17(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

std::string run_experiment(const std::string& config_json, const std::string& out_dir,
                           int workers) {
    const json cfg = effective_config(config_json);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    const SyntheticDGP dgp = dgp_preset(cfg["preset"]);
    const int arm = cfg["arm"];
    const SeedPolicy sp{cfg["seed"].get<std::uint64_t>()};
    const GaussianMixtureLaw law = evaluation_law(dgp, arm);

    // Fixed evaluation grid from a calibration draw.
    const ObservationBatch calib = project_outcomes(
        dgp, generate(dgp, cfg["region_n"].get<int>(), SeedPolicy{sp.derive("region")}));
    EvaluationRegion region;
    const std::vector<double> region_lower = cfg["region_lower"];
    const std::vector<double> region_upper = cfg["region_upper"];
    if (!region_lower.empty() || !region_upper.empty()) {
        if (region_lower.size() != region_upper.size()) {
            throw ConfigError("region_lower and region_upper must have equal length");
        }
        region.lower = Eigen::Map<const Eigen::VectorXd>(
            region_lower.data(), static_cast<Eigen::Index>(region_lower.size()));
        region.upper = Eigen::Map<const Eigen::VectorXd>(
            region_upper.data(), static_cast<Eigen::Index>(region_upper.size()));
        region.grid_points_per_axis = cfg["grid_points_per_axis"].get<int>();
        region.validate();
    } else {
        region = bounding_region(calib.y, cfg["grid_points_per_axis"].get<int>(),
                                 cfg["region_margin"].get<double>());
    }
    const Grid grid = make_grid(region);

    const std::vector<std::string> estimators = cfg["estimators"];
    const std::vector<int> n_values = cfg["n"];
    const int reps = cfg["replications"];
    const int folds = cfg["folds"];
    const int k_nn = cfg["k_nn"];
    const bool oracle = cfg["nuisance"] == "oracle";
    const bool band_on = cfg["band"];
    const double alpha = cfg["alpha"];
    const int multipliers = cfg["multipliers"];
    int excluded = 0;

    std::ostringstream curves;
    curves << "estimator,n,h,error,error_se,replications\n";
    std::ostringstream bands;
    bands << "estimator,n,replication,c_hat,covered\n";
    bool wrote_band = false;

    json slopes = json::object();
    json coverage = json::object();
    std::vector<SvgSeries> curve_series;

    for (const auto& name : estimators) {
        const EstimatorSpec spec = parse_estimator(name);
        std::vector<double> curve_n, curve_err, curve_se;
        for (const int n : n_values) {
            const double h = cfg["h_c"].get<double>() *
                             std::pow(static_cast<double>(n), cfg["h_exponent"].get<double>());
            std::vector<double> errors;
            int covered_count = 0, band_count = 0;
            for (int rep = 0; rep < reps; ++rep) {
                try {
                    const SeedPolicy data_seed{
                        sp.derive("data-" + std::to_string(n), static_cast<std::uint64_t>(rep))};
                    const ObservationBatch batch =
                        project_outcomes(dgp, generate(dgp, n, data_seed));
                    const auto kernel = make_kernel(spec, h, dgp, arm, batch, grid, k_nn);

                    double error = 0.0;
                    const GridEstimate* density = nullptr;
                    GridEstimate est;
                    Eigen::VectorXd density_target;

                    if (spec.kind == "plugin" || spec.kind == "plugin-ipw") {
                        Eigen::VectorXd pi;
                        if (spec.kind == "plugin-ipw") {
                            const CrossFitPlan plan = make_crossfit_plan(
                                static_cast<std::size_t>(batch.n()), folds, data_seed);
                            pi = fit_propensity(batch, arm, plan, dgp.declared_pi_min / 2.0)
                                     .heldout;
                        }
                        est = plugin_estimate(batch, arm, pi.size() > 0 ? &pi : nullptr, *kernel,
                                              grid,
                                              spec.kind == "plugin" ? PluginMode::IpwFree
                                                                    : PluginMode::Ipw,
                                              workers);
                        density_target = population_density(law, *kernel, grid);
                        error = ise(est, density_target, grid);
                        density = &est;
                    } else {
                        CrossFitNuisance nuis;
                        const bool with_grad = spec.kind == "dss";
                        if (oracle) {
                            const ConditionalOracle dgp_oracle =
                                make_dgp_oracle(dgp, arm, *kernel);
                            nuis = oracle_nuisance(dgp_oracle, batch, arm, *kernel, grid,
                                                   with_grad, cfg["oracle_mc"].get<int>(),
                                                   data_seed, workers);
                        } else {
                            const CrossFitPlan plan = make_crossfit_plan(
                                static_cast<std::size_t>(batch.n()), folds, data_seed);
                            NuisanceOptions options;
                            options.with_grad = with_grad;
                            options.clip = dgp.declared_pi_min / 2.0;
                            nuis = fit_localized_regressions(batch, arm, plan, *kernel, grid,
                                                             options, workers);
                        }
                        if (spec.kind == "dis") {
                            est = dis_estimate(batch, arm, nuis, *kernel, grid, workers);
                            density_target = population_density(law, *kernel, grid);
                            error = ise(est, density_target, grid);
                            density = &est;
                        } else {
                            est = dss_estimate(batch, arm, nuis, *kernel, grid, -1.0, workers);
                            const Eigen::MatrixXd target = population_score(law, *kernel, grid);
                            error = (grid.weights.array() *
                                     (est.values - target).rowwise().squaredNorm().array())
                                        .sum();
                        }
                    }
                    errors.push_back(error);

                    if (band_on && density) {
                        const SeedPolicy band_seed{sp.derive(
                            "band-" + name + "-" + std::to_string(n),
                            static_cast<std::uint64_t>(rep))};
                        const BandResult band =
                            multiplier_band(density->influence, density->values.col(0), alpha,
                                            multipliers, band_seed);
                        const bool covered = band.covers(density_target);
                        bands << name << "," << n << "," << rep << "," << fmt17(band.c_hat) << ","
                              << (covered ? 1 : 0) << "\n";
                        wrote_band = true;
                        ++band_count;
                        if (covered) ++covered_count;
                    }
                } catch (const std::exception& e) {
                    ++excluded;
                    std::cerr << "replication excluded (" << name << ", n=" << n
                              << ", rep=" << rep << "): " << e.what() << "\n";
                }
            }
            if (errors.empty()) continue;
            double mean = 0.0;
            for (const double e : errors) mean += e;
            mean /= static_cast<double>(errors.size());
            double var = 0.0;
            for (const double e : errors) var += (e - mean) * (e - mean);
            const double se = errors.size() > 1
                                  ? std::sqrt(var / (static_cast<double>(errors.size()) - 1.0) /
                                              static_cast<double>(errors.size()))
                                  : 0.0;
            curves << name << "," << n << "," << fmt17(h) << "," << fmt17(mean) << ","
                   << fmt17(se) << "," << errors.size() << "\n";
            curve_n.push_back(static_cast<double>(n));
            curve_err.push_back(mean);
            curve_se.push_back(se);
            if (band_count > 0) {
                coverage[name][std::to_string(n)] =
                    static_cast<double>(covered_count) / static_cast<double>(band_count);
            }
        }
        SvgSeries series;
        series.label = name;
        series.x = curve_n;
        series.y = curve_err;
        if (curve_n.size() >= 3) {
            bool positive = true;
            for (const double e : curve_err) positive = positive && e > 0.0;
            if (positive) {
                const RateCurve curve = rate_slope(curve_n, curve_err, curve_se);
                slopes[name] = curve.slope;
                series.fit_slope = curve.slope;
                series.fit_intercept = curve.intercept;
                series.draw_fit = true;
            }
        }
        if (!series.x.empty()) curve_series.push_back(std::move(series));
    }

    std::vector<std::string> outputs;
    write_text(dir / "curves.csv", curves.str());
    outputs.push_back("curves.csv");
    if (wrote_band) {
        write_text(dir / "bands.csv", bands.str());
        outputs.push_back("bands.csv");
    }
    if (!curve_series.empty()) {
        bool plottable = true;
        for (const auto& s : curve_series) {
            for (const double v : s.y) plottable = plottable && v > 0.0;
        }
        if (plottable) {
            write_text(dir / "curves.svg",
                       svg_loglog_plot(curve_series, cfg["name"], "n", "error"));
            outputs.push_back("curves.svg");
        }
    }

    json peakiness_summary = json::object();
    const std::vector<double> peak_h = cfg["peakiness_h"];
    if (!peak_h.empty()) {
        Rng rng = sp.stream("peakiness");
        const Eigen::MatrixXd samples = law.sample(rng, cfg["peakiness_samples"].get<int>());
        std::ostringstream peak_csv;
        peak_csv << "kernel,h,H,Hs,d_eff\n";
        for (const std::string kernel_name : cfg["peakiness_kernels"]) {
            const EstimatorSpec spec{"dis", kernel_name};
            KernelFactory factory = [&](double h) {
                return make_kernel(spec, h, dgp, arm, calib, grid, k_nn);
            };
            const PeakinessReport report = peakiness(factory, peak_h, samples, grid, true, workers);
            for (std::size_t i = 0; i < report.h.size(); ++i) {
                peak_csv << kernel_name << "," << fmt17(report.h[i]) << "," << fmt17(report.H[i])
                         << "," << fmt17(report.Hs[i]) << "," << fmt17(report.d_eff[i]) << "\n";
            }
            peakiness_summary[kernel_name] = {{"slope", report.slope},
                                              {"slope_se", report.slope_se}};
        }
        write_text(dir / "peakiness.csv", peak_csv.str());
        outputs.push_back("peakiness.csv");
    }

    json drift_summary = json::object();
    const std::vector<double> drift_h = cfg["drift_h"];
    const std::vector<double> drift_eps = cfg["drift_eps"];
    if (!drift_h.empty() && !drift_eps.empty()) {
        Rng rng = sp.stream("drift");
        const Eigen::MatrixXd samples = law.sample(rng, cfg["drift_samples"].get<int>());
        const auto base_score =
            std::make_shared<MixtureScoreField>(law, ForwardDiffusionSpec{});
        PerturbedKernelFactory factory = [&](double h, double eps) {
            std::shared_ptr<const ScoreField> field = base_score;
            if (eps != 0.0) {
                field = perturb_score(base_score, eps, PerturbMode::LinearTilt, grid.dim());
            }
            return std::make_unique<TransportedKernel>(base_score->spec(), field, h, grid.dim());
        };
        const DriftReport report =
            drift_diagnostic(factory, drift_h, drift_eps, samples, grid, workers);
        write_text(dir / "drift.csv", report.to_csv());
        outputs.push_back("drift.csv");
        drift_summary = {{"h_exponent", report.h_exponent},
                         {"eps_exponent", report.eps_exponent}};
    }

    json manifest;
    manifest["config"] = cfg;
    manifest["config_hash"] = fnv1a(cfg.dump());
    manifest["outputs"] = outputs;
    manifest["excluded_replications"] = excluded;
    manifest["slopes"] = slopes;
    manifest["coverage"] = coverage;
    manifest["peakiness"] = peakiness_summary;
    manifest["drift"] = drift_summary;
    manifest["grid_fingerprint"] = grid.fingerprint();
    const std::string manifest_text = manifest.dump(2) + "\n";
    write_text(dir / "manifest.json", manifest_text);
    return manifest_text;
}

}  // namespace cfgeo
