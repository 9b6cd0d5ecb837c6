#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "madml/config.hpp"
#include "madml/errors.hpp"
#include "madml/report.hpp"

namespace fs = std::filesystem;
using madml::Error;
using madml::ErrorKind;
using madml::RunConfig;

namespace {

struct FlagOverrides {
    std::string config_path, data_path, out_dir;
    std::string outcome, treatment, conditioning;
    std::vector<std::string> controls;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
    int knots = -1, degree = -1, grid = -1, boot = -1;
    double eta = -1.0, c0 = -1.0;
    std::string penalty_method, dgp, arm = "treated";
    int n = -1, dz = -1, reps = -1;
    bool single_arm = false;
};

void add_common_flags(CLI::App* cmd, FlagOverrides& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--seed", f.seed, "master RNG seed")->check(CLI::NonNegativeNumber);
    cmd->add_option("--threads", f.threads, "worker threads (default: hardware)");
}

void add_fit_flags(CLI::App* cmd, FlagOverrides& f) {
    cmd->add_option("--data", f.data_path, "input CSV");
    cmd->add_option("--outcome", f.outcome, "outcome column");
    cmd->add_option("--treatment", f.treatment, "treatment column");
    cmd->add_option("--conditioning", f.conditioning, "conditioning column");
    cmd->add_option("--controls", f.controls, "control columns")->delimiter(',');
    cmd->add_option("--knots", f.knots, "number of basis knots (boundaries included)");
    cmd->add_option("--degree", f.degree, "b-spline degree");
    cmd->add_option("--eta", f.eta, "1 - confidence level");
    cmd->add_option("--grid", f.grid, "evaluation grid size");
    cmd->add_option("--boot", f.boot, "uniform-band bootstrap draws");
    cmd->add_option("--c0", f.c0, "penalty bootstrap multiplier c0");
    cmd->add_option("--penalty-method", f.penalty_method, "bootstrap|cv_only");
}

RunConfig build_config(const FlagOverrides& f) {
    RunConfig cfg =
        f.config_path.empty() ? madml::default_run_config() : madml::load_config_file(f.config_path);
    if (!f.data_path.empty()) cfg.data_path = f.data_path;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (f.seed_set) cfg.seed = f.seed;
    if (f.threads >= 0) cfg.threads = f.threads;
    if (!f.outcome.empty()) cfg.schema.outcome = f.outcome;
    if (!f.treatment.empty()) cfg.schema.treatment = f.treatment;
    if (!f.conditioning.empty()) cfg.schema.conditioning = f.conditioning;
    if (!f.controls.empty()) cfg.schema.controls = f.controls;
    if (f.knots > 0) cfg.basis.knot_count = f.knots;
    if (f.degree >= 0) {
        cfg.basis.degree = f.degree;
        if (f.degree == 0) cfg.basis.kind = madml::BasisKind::local_constant;
    }
    if (f.eta > 0.0) cfg.inference.eta = f.eta;
    if (f.grid > 0) cfg.inference.grid_size = f.grid;
    if (f.boot > 0) cfg.inference.n_boot = f.boot;
    if (f.c0 > 0.0) cfg.penalty.c0 = f.c0;
    if (!f.penalty_method.empty()) {
        if (f.penalty_method == "bootstrap")
            cfg.penalty.method = madml::PenaltyMethod::bootstrap;
        else if (f.penalty_method == "cv_only")
            cfg.penalty.method = madml::PenaltyMethod::cv_only;
        else
            madml::throw_usage("--penalty-method must be bootstrap or cv_only");
    }
    if (!f.dgp.empty()) {
        if (f.dgp == "s1")
            cfg.dgp.dgp = madml::Dgp::S1;
        else if (f.dgp == "s2")
            cfg.dgp.dgp = madml::Dgp::S2;
        else if (f.dgp == "s3")
            cfg.dgp.dgp = madml::Dgp::S3;
        else
            madml::throw_usage("--dgp must be one of s1, s2, s3");
    }
    if (f.n > 0) cfg.dgp.n = f.n;
    if (f.dz > 0) cfg.dgp.d_z = f.dz;
    if (f.reps >= 0) {
        if (f.reps == 0) madml::throw_usage("--reps must be positive");
        cfg.sim_reps = f.reps;
    }
    return cfg;
}

madml::Dataset load_and_preprocess(const RunConfig& cfg) {
    if (cfg.data_path.empty()) madml::throw_usage("no data file given (--data or config data.path)");
    if (!fs::exists(cfg.data_path))
        madml::throw_usage("data file not found: " + cfg.data_path);
    if (cfg.schema.outcome.empty() || cfg.schema.treatment.empty() ||
        cfg.schema.conditioning.empty())
        madml::throw_usage("schema incomplete: outcome, treatment and conditioning are required");
    madml::Dataset ds = madml::load_csv(cfg.data_path, cfg.schema);
    std::size_t removed = 0;
    if (cfg.preprocess.trim_lower_q > 0.0 || cfg.preprocess.trim_upper_q > 0.0 ||
        !cfg.preprocess.trim_group_cols.empty()) {
        madml::TrimResult trimmed = madml::trim_quantiles(ds, cfg.preprocess);
        removed = trimmed.rows_removed;
        ds = std::move(trimmed.data);
    }
    if (cfg.preprocess.normalize) ds = madml::normalize_unit_interval(ds);
    std::cout << "loaded " << ds.n() << " rows (" << removed << " trimmed), d_z = " << ds.dz()
              << ", treated = " << ds.treated_count() << "\n";
    return ds;
}

int run_fit(const FlagOverrides& f, bool cate_mode) {
    RunConfig cfg = build_config(f);
    fs::create_directories(cfg.out_dir);
    madml::Dataset ds = load_and_preprocess(cfg);
    const std::string stem = cate_mode ? "cate" : "fit";
    madml::CateFit fit;
    if (cate_mode && !f.single_arm) {
        fit = madml::fit_cate(ds, cfg.fit_config());
    } else {
        const madml::Arm arm = f.arm == "control" ? madml::Arm::control : madml::Arm::treated;
        fit = madml::fit_counterfactual(ds, cfg.fit_config(), arm);
    }
    const std::string json_path = (fs::path(cfg.out_dir) / (stem + ".json")).string();
    const std::string csv_path = (fs::path(cfg.out_dir) / (stem + "_grid.csv")).string();
    madml::write_fit_json(fit, cfg, json_path);
    madml::write_fit_grid_csv(fit, csv_path, fit.is_cate ? "cate" : "ghat");
    std::cout << madml::fit_summary(fit) << "wrote " << json_path << " and " << csv_path << "\n";
    return 0;
}

int run_simulate(const FlagOverrides& f) {
    RunConfig cfg = build_config(f);
    fs::create_directories(cfg.out_dir);
    std::vector<madml::EstimatorAdapter> adapters;
    adapters.push_back(madml::make_madml_adapter(cfg.fit_config()));
    adapters.push_back(madml::make_dml_adapter(cfg.fit_config()));
    madml::DgpConfig dgp = cfg.dgp;
    dgp.seed = cfg.seed;
    madml::SimulationReport report = madml::run_monte_carlo(dgp, adapters, cfg.mc_config());
    const std::string csv_path = (fs::path(cfg.out_dir) / "report.csv").string();
    const std::string json_path = (fs::path(cfg.out_dir) / "report.json").string();
    madml::write_report_csv(report, csv_path);
    madml::write_report_json(report, cfg, json_path);
    std::cout << madml::report_summary(report) << "wrote " << csv_path << " and " << json_path
              << "\n";
    return 0;
}

nlohmann::json error_json(const std::string& kind, const std::string& msg) {
    return {{"error", msg}, {"kind", kind}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"doubly-robust CATE estimation with high-dimensional controls"};
    app.require_subcommand(1);

    FlagOverrides fit_flags, cate_flags, sim_flags;

    CLI::App* fit = app.add_subcommand("fit", "single-arm counterfactual mean fit");
    add_common_flags(fit, fit_flags);
    add_fit_flags(fit, fit_flags);
    fit->add_option("--arm", fit_flags.arm, "treated|control")
        ->check(CLI::IsMember({"treated", "control"}));

    CLI::App* cate = app.add_subcommand("cate", "two-arm CATE fit with combined variance");
    add_common_flags(cate, cate_flags);
    add_fit_flags(cate, cate_flags);
    cate->add_flag("--single-arm", cate_flags.single_arm, "treated arm only (equals `fit`)");

    CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study of MA-DML vs benchmark DML");
    add_common_flags(sim, sim_flags);
    sim->add_option("--dgp", sim_flags.dgp, "s1|s2|s3")->check(CLI::IsMember({"s1", "s2", "s3"}));
    sim->add_option("--n", sim_flags.n, "sample size per replication");
    sim->add_option("--dz", sim_flags.dz, "control dimension");
    sim->add_option("--reps", sim_flags.reps, "replications");
    sim->add_option("--grid", sim_flags.grid, "evaluation grid size");
    sim->add_option("--boot", sim_flags.boot, "uniform-band bootstrap draws");
    sim->add_option("--c0", sim_flags.c0, "penalty bootstrap multiplier c0");
    sim->add_option("--penalty-method", sim_flags.penalty_method, "bootstrap|cv_only");

    for (auto* cmd : {fit, cate, sim}) {
        cmd->get_option("--seed")->each([&, cmd](const std::string&) {
            if (cmd == fit) fit_flags.seed_set = true;
            if (cmd == cate) cate_flags.seed_set = true;
            if (cmd == sim) sim_flags.seed_set = true;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << error_json("usage", e.what()).dump() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(fit)) return run_fit(fit_flags, false);
        if (app.got_subcommand(cate)) return run_fit(cate_flags, true);
        return run_simulate(sim_flags);
    } catch (const Error& e) {
        const char* kind = e.kind() == ErrorKind::usage  ? "usage"
                           : e.kind() == ErrorKind::data ? "data"
                                                         : "compute";
        std::cerr << error_json(kind, e.what()).dump() << "\n";
        switch (e.kind()) {
            case ErrorKind::usage: return 2;
            case ErrorKind::data: return 3;
            case ErrorKind::compute: return 1;
        }
        return 1;
    } catch (const std::exception& e) {
        std::cerr << error_json("compute", e.what()).dump() << "\n";
        return 1;
    }
}
