#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "cfgeo/svg.hpp"
#include "cfgeo/synthlab.hpp"

namespace {

using cfgeo::ConfigError;
using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
}

json load_config(const std::string& path, const std::vector<std::string>& overrides,
                 const std::vector<std::string>& allowed) {
    json cfg = json::object();
    if (!path.empty()) {
        try {
            cfg = json::parse(read_file(path));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        try {
            cfg[key] = json::parse(value);
        } catch (const json::exception&) {
            cfg[key] = value;
        }
    }
    if (!allowed.empty()) {
        for (const auto& item : cfg.items()) {
            if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
                throw ConfigError("unknown config key: " + item.key());
            }
        }
    }
    return cfg;
}

cfgeo::Grid make_grid_from_config(const json& cfg, const cfgeo::ObservationBatch& batch) {
    cfgeo::EvaluationRegion region;
    const json grid_cfg = cfg.value("grid", json::object());
    for (const auto& item : grid_cfg.items()) {
        const std::string& k = item.key();
        if (k != "lower" && k != "upper" && k != "points_per_axis" && k != "margin") {
            throw ConfigError("unknown config key: grid." + k);
        }
    }
    const int per_axis = grid_cfg.value("points_per_axis", 9);
    if (grid_cfg.contains("lower") && grid_cfg.contains("upper")) {
        const auto lower = grid_cfg.at("lower").get<std::vector<double>>();
        const auto upper = grid_cfg.at("upper").get<std::vector<double>>();
        region.lower = Eigen::Map<const Eigen::VectorXd>(lower.data(),
                                                         static_cast<Eigen::Index>(lower.size()));
        region.upper = Eigen::Map<const Eigen::VectorXd>(upper.data(),
                                                         static_cast<Eigen::Index>(upper.size()));
        region.grid_points_per_axis = per_axis;
        region.validate();
    } else {
        region = cfgeo::bounding_region(batch.y, per_axis, grid_cfg.value("margin", 0.10));
    }
    return cfgeo::make_grid(region);
}

std::unique_ptr<cfgeo::SmoothingKernel> make_kernel_from_config(
    const json& cfg, const cfgeo::ObservationBatch& batch, int arm, const cfgeo::Grid& grid) {
    if (!cfg.contains("kernel")) throw ConfigError("missing config key: kernel");
    const json k = cfg.at("kernel");
    for (const auto& item : k.items()) {
        const std::string& key = item.key();
        if (key != "type" && key != "h" && key != "k_nn" && key != "ridge" && key != "steps" &&
            key != "mixture" && key != "covariance") {
            throw ConfigError("unknown config key: kernel." + key);
        }
    }
    const std::string type = k.value("type", std::string("iso"));
    const double h = k.value("h", 0.2);
    const auto dim = grid.dim();
    if (type == "iso") return std::make_unique<cfgeo::IsotropicGaussianKernel>(h, dim);
    if (type == "aniso") {
        const auto rows = k.at("covariance").get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd cov(static_cast<Eigen::Index>(rows.size()),
                            static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows.size(); ++c) {
                cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            }
        }
        return std::make_unique<cfgeo::AnisotropicGaussianKernel>(cov);
    }
    if (type == "local") {
        const auto idx = batch.arm_indices(arm);
        Eigen::MatrixXd arm_outcomes(static_cast<Eigen::Index>(idx.size()), dim);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            arm_outcomes.row(static_cast<Eigen::Index>(r)) = batch.y.row(idx[r]);
        }
        const Eigen::RowVectorXd mean = arm_outcomes.colwise().mean();
        const Eigen::MatrixXd centered = arm_outcomes.rowwise() - mean;
        const Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(arm_outcomes.rows());
        return std::make_unique<cfgeo::LocalGeometryKernel>(
            h, arm_outcomes, grid, k.value("k_nn", 50),
            k.value("ridge", cfgeo::default_pca_ridge(cov)));
    }
    if (type == "transported") {
        if (!k.contains("mixture")) {
            throw ConfigError("kernel.mixture is required for a transported kernel");
        }
        const auto law = cfgeo::mixture_from_json(k.at("mixture").dump());
        const auto score =
            std::make_shared<cfgeo::MixtureScoreField>(law, cfgeo::ForwardDiffusionSpec{});
        return std::make_unique<cfgeo::TransportedKernel>(score->spec(), score, h, dim,
                                                          k.value("steps", 64));
    }
    throw ConfigError("unknown kernel type: " + type);
}

void write_manifest(const std::string& out_path, const std::string& subcommand, const json& cfg,
                    std::uint64_t seed, const json& inputs) {
    json m;
    m["subcommand"] = subcommand;
    m["config"] = cfg;
    m["seed"] = seed;
    m["inputs"] = inputs;
    write_file(out_path + ".manifest.json", m.dump(2) + "\n");
}

const std::vector<std::string> kFitKeys = {"arm",   "folds", "seed",  "clip", "floor",
                                           "alpha", "multipliers", "kernel", "grid",
                                           "nuisance", "preset", "oracle_mc"};

struct FitInputs {
    cfgeo::ObservationBatch batch;
    cfgeo::Grid grid;
    std::unique_ptr<cfgeo::SmoothingKernel> kernel;
    cfgeo::CrossFitNuisance nuisance;
    int arm = 1;
    cfgeo::SeedPolicy seed;
};

FitInputs prepare_fit(const std::string& data_path, const json& cfg, bool with_grad,
                      int workers) {
    FitInputs fit;
    fit.batch = cfgeo::read_observations_csv(data_path);
    fit.arm = cfg.value("arm", 1);
    fit.seed = cfgeo::SeedPolicy{cfg.value("seed", std::uint64_t{1})};
    fit.grid = make_grid_from_config(cfg, fit.batch);
    fit.kernel = make_kernel_from_config(cfg, fit.batch, fit.arm, fit.grid);

    const std::string nuisance_mode = cfg.value("nuisance", std::string("crossfit"));
    if (nuisance_mode == "oracle") {
        if (!cfg.contains("preset")) {
            throw ConfigError("oracle nuisance needs a preset config key");
        }
        const auto dgp = cfgeo::dgp_preset(cfg.at("preset").get<std::string>());
        const auto oracle = cfgeo::make_dgp_oracle(dgp, fit.arm, *fit.kernel);
        fit.nuisance =
            cfgeo::oracle_nuisance(oracle, fit.batch, fit.arm, *fit.kernel, fit.grid, with_grad,
                                   cfg.value("oracle_mc", 400), fit.seed, workers);
    } else if (nuisance_mode == "crossfit") {
        const auto plan = cfgeo::make_crossfit_plan(static_cast<std::size_t>(fit.batch.n()),
                                                    cfg.value("folds", 5), fit.seed);
        cfgeo::NuisanceOptions options;
        options.with_grad = with_grad;
        options.clip = cfg.value("clip", 0.01);
        fit.nuisance = cfgeo::fit_localized_regressions(fit.batch, fit.arm, plan, *fit.kernel,
                                                        fit.grid, options, workers);
    } else {
        throw ConfigError("nuisance must be 'crossfit' or 'oracle'");
    }
    return fit;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geometry-adaptive counterfactual distribution estimation"};
    app.require_subcommand(1);
    app.fallthrough();
    int workers = 1;
    app.add_option("--workers", workers, "Worker thread count")->capture_default_str();

    std::string preset = "gauss2d", out_path, data_path, config_path;
    std::vector<std::string> overrides;
    int sim_n = 1000;
    std::uint64_t cli_seed = 0;
    bool seed_given = false;

    auto* simulate = app.add_subcommand("simulate", "Draw a synthetic observation CSV");
    simulate->add_option("--preset", preset, "DGP preset name")->capture_default_str();
    simulate->add_option("--n", sim_n, "Sample size")->capture_default_str();
    auto* seed_opt = simulate->add_option("--seed", cli_seed, "Master seed");
    simulate->add_option("--out", out_path, "Output CSV path")->required();

    auto add_fit_options = [&](CLI::App* sub) {
        sub->add_option("--data", data_path, "Observation CSV")->required();
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", overrides, "Inline key=value config override");
        sub->add_option("--out", out_path, "Output path")->required();
    };
    auto* fit_dis = app.add_subcommand("fit-dis", "One-step smoothed density estimate");
    add_fit_options(fit_dis);
    auto* fit_dss = app.add_subcommand("fit-dss", "One-step smoothed score estimate");
    add_fit_options(fit_dss);
    auto* stein = app.add_subcommand("stein", "Stein functional estimates over test fields");
    add_fit_options(stein);
    auto* band = app.add_subcommand("band", "Simultaneous multiplier band for the density");
    add_fit_options(band);

    auto* peak = app.add_subcommand("peakiness", "Peakiness / effective-dimension diagnostic");
    peak->add_option("--config", config_path, "JSON config file")->required();
    peak->add_option("--set", overrides, "Inline key=value config override");
    peak->add_option("--out", out_path, "Output CSV path")->required();

    auto* drift = app.add_subcommand("drift", "Kernel geometry-drift diagnostic");
    drift->add_option("--config", config_path, "JSON config file")->required();
    drift->add_option("--set", overrides, "Inline key=value config override");
    drift->add_option("--out", out_path, "Output CSV path")->required();

    auto* experiment = app.add_subcommand("experiment", "Run a full experiment config");
    experiment->add_option("--config", config_path, "JSON config file")->required();
    experiment->add_option("--set", overrides, "Inline key=value config override");
    experiment->add_option("--out", out_path, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    seed_given = seed_opt->count() > 0;
    try {
        if (simulate->parsed()) {
            const auto dgp = cfgeo::dgp_preset(preset);
            const cfgeo::SeedPolicy sp{seed_given ? cli_seed : 1};
            const auto batch = cfgeo::generate(dgp, sim_n, sp);
            const auto parent = std::filesystem::path(out_path).parent_path();
            if (!parent.empty()) std::filesystem::create_directories(parent);
            cfgeo::write_observations_csv(batch, out_path);
            write_manifest(out_path, "simulate",
                           json{{"preset", preset}, {"n", sim_n}}, sp.master_seed,
                           json::object());
            return 0;
        }
        if (fit_dis->parsed() || fit_dss->parsed() || stein->parsed() || band->parsed()) {
            const json cfg = load_config(config_path, overrides, kFitKeys);
            const bool with_grad = fit_dss->parsed() || stein->parsed();
            FitInputs fit = prepare_fit(data_path, cfg, with_grad, workers);
            const json inputs = json{{"data", data_path}};

            if (fit_dis->parsed()) {
                const auto est = cfgeo::dis_estimate(fit.batch, fit.arm, fit.nuisance,
                                                     *fit.kernel, fit.grid, workers);
                write_file(out_path, est.to_csv(fit.grid));
            } else if (fit_dss->parsed()) {
                const auto est =
                    cfgeo::dss_estimate(fit.batch, fit.arm, fit.nuisance, *fit.kernel, fit.grid,
                                        cfg.value("floor", -1.0), workers);
                write_file(out_path, est.to_csv(fit.grid));
            } else if (stein->parsed()) {
                const auto fields = cfgeo::default_test_fields(fit.grid.dim(), fit.seed);
                std::ostringstream csv;
                csv.precision(17);
                csv << "g_id,value,sigma2\n";
                for (const auto& field : fields) {
                    const auto est = cfgeo::stein_estimate(fit.batch, fit.arm, fit.nuisance,
                                                           *fit.kernel, fit.grid, field, workers);
                    csv << est.g_id << "," << est.value << "," << est.sigma2 << "\n";
                }
                write_file(out_path, csv.str());
            } else {
                const auto est = cfgeo::dis_estimate(fit.batch, fit.arm, fit.nuisance,
                                                     *fit.kernel, fit.grid, workers);
                const auto result = cfgeo::multiplier_band(
                    est.influence, est.values.col(0), cfg.value("alpha", 0.05),
                    cfg.value("multipliers", 1000), fit.seed);
                std::filesystem::create_directories(out_path);
                write_file((std::filesystem::path(out_path) / "band.csv").string(),
                           result.to_csv());
                write_file((std::filesystem::path(out_path) / "band_summary.json").string(),
                           result.summary_json() + "\n");
                write_file((std::filesystem::path(out_path) / "estimate.csv").string(),
                           est.to_csv(fit.grid));
            }
            write_manifest(out_path, argv[1], cfg, fit.seed.master_seed, inputs);
            return 0;
        }
        if (peak->parsed()) {
            const json cfg = load_config(config_path, overrides,
                                         {"preset", "arm", "h", "samples", "seed", "kernel",
                                          "grid", "include_score", "k_nn"});
            const auto dgp = cfgeo::dgp_preset(cfg.value("preset", std::string("gauss2d")));
            const int arm = cfg.value("arm", 1);
            const cfgeo::SeedPolicy sp{cfg.value("seed", std::uint64_t{1})};
            const auto law = cfgeo::evaluation_law(dgp, arm);
            cfgeo::Rng rng = sp.stream("peakiness");
            const Eigen::MatrixXd samples = law.sample(rng, cfg.value("samples", 200));
            cfgeo::ObservationBatch calib = cfgeo::project_outcomes(
                dgp, cfgeo::generate(dgp, 2000, cfgeo::SeedPolicy{sp.derive("region")}));
            const auto grid = make_grid_from_config(cfg, calib);
            if (!cfg.contains("h")) throw ConfigError("missing config key: h");
            const auto h_values = cfg.at("h").get<std::vector<double>>();
            cfgeo::KernelFactory factory = [&](double h) {
                json kcfg = cfg;
                kcfg["kernel"]["h"] = h;
                return make_kernel_from_config(kcfg, calib, arm, grid);
            };
            const auto report = cfgeo::peakiness(factory, h_values, samples, grid,
                                                 cfg.value("include_score", true), workers);
            write_file(out_path, report.to_csv());
            write_manifest(out_path, "peakiness", cfg, sp.master_seed, json::object());
            return 0;
        }
        if (drift->parsed()) {
            const json cfg = load_config(config_path, overrides,
                                         {"preset", "arm", "h", "eps", "samples", "seed", "grid",
                                          "steps"});
            const auto dgp = cfgeo::dgp_preset(cfg.value("preset", std::string("gauss2d")));
            const int arm = cfg.value("arm", 1);
            const cfgeo::SeedPolicy sp{cfg.value("seed", std::uint64_t{1})};
            const auto law = cfgeo::evaluation_law(dgp, arm);
            cfgeo::Rng rng = sp.stream("drift");
            const Eigen::MatrixXd samples = law.sample(rng, cfg.value("samples", 200));
            cfgeo::ObservationBatch calib = cfgeo::project_outcomes(
                dgp, cfgeo::generate(dgp, 2000, cfgeo::SeedPolicy{sp.derive("region")}));
            const auto grid = make_grid_from_config(cfg, calib);
            if (!cfg.contains("h") || !cfg.contains("eps")) {
                throw ConfigError("missing config key: h/eps");
            }
            const auto score =
                std::make_shared<cfgeo::MixtureScoreField>(law, cfgeo::ForwardDiffusionSpec{});
            const int steps = cfg.value("steps", 64);
            cfgeo::PerturbedKernelFactory factory = [&](double h, double eps) {
                std::shared_ptr<const cfgeo::ScoreField> field = score;
                if (eps != 0.0) {
                    field = cfgeo::perturb_score(score, eps, cfgeo::PerturbMode::LinearTilt,
                                                 grid.dim());
                }
                return std::make_unique<cfgeo::TransportedKernel>(score->spec(), field, h,
                                                                  grid.dim(), steps);
            };
            const auto report = cfgeo::drift_diagnostic(
                factory, cfg.at("h").get<std::vector<double>>(),
                cfg.at("eps").get<std::vector<double>>(), samples, grid, workers);
            write_file(out_path, report.to_csv());
            write_manifest(out_path, "drift", cfg, sp.master_seed, json::object());
            return 0;
        }
        if (experiment->parsed()) {
            json cfg = load_config(config_path, overrides, {});
            cfgeo::run_experiment(cfg.dump(), out_path, workers);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
