#include "madml/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "madml/errors.hpp"
#include "madml/parallel.hpp"

namespace madml {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw_usage("config section '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw_usage("unknown config key '" + where + "." + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw_usage(std::string("config key '") + key + "' has the wrong type");
    }
}

void read_vector(const json& j, const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    out = j.at(key).get<std::vector<double>>();
}

void read_eigen(const json& j, const char* key, Eigen::VectorXd& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    out = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

}  // namespace

FitConfig RunConfig::fit_config() const {
    FitConfig cfg;
    cfg.basis = basis;
    cfg.solver = solver;
    cfg.penalty = penalty;
    cfg.inference = inference;
    cfg.clip.pi_lo = preprocess.propensity_clip_lo;
    cfg.clip.pi_hi = preprocess.propensity_clip_hi;
    cfg.clip.outcome_frac = preprocess.outcome_clip_frac;
    cfg.seed = seed;
    cfg.threads = effective_threads();
    return cfg;
}

McConfig RunConfig::mc_config() const {
    McConfig mc;
    mc.reps = sim_reps;
    mc.grid_size = inference.grid_size;
    mc.eval_x = sim_eval_x;
    mc.seed = seed;
    mc.threads = effective_threads();
    return mc;
}

int RunConfig::effective_threads() const {
    return threads > 0 ? threads : hardware_threads();
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    check_keys(j, "", {"seed", "threads", "data", "preprocess", "basis", "solver", "penalty",
                       "inference", "simulation", "output"});
    read(j, "seed", cfg.seed);
    read(j, "threads", cfg.threads);

    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data", {"path", "delimiter", "outcome", "treatment", "conditioning",
                               "controls", "include_conditioning_in_controls"});
        read(d, "path", cfg.data_path);
        std::string delim = ",";
        read(d, "delimiter", delim);
        if (delim.size() != 1) throw_usage("data.delimiter must be a single character");
        cfg.schema.delimiter = delim[0];
        read(d, "outcome", cfg.schema.outcome);
        read(d, "treatment", cfg.schema.treatment);
        read(d, "conditioning", cfg.schema.conditioning);
        read(d, "controls", cfg.schema.controls);
        read(d, "include_conditioning_in_controls", cfg.schema.include_conditioning_in_controls);
    }

    if (j.contains("preprocess")) {
        const json& p = j.at("preprocess");
        check_keys(p, "preprocess",
                   {"normalize", "trim_lower_q", "trim_upper_q", "trim_group_cols",
                    "min_group_rows", "propensity_clip", "outcome_clip_frac"});
        read(p, "normalize", cfg.preprocess.normalize);
        read(p, "trim_lower_q", cfg.preprocess.trim_lower_q);
        read(p, "trim_upper_q", cfg.preprocess.trim_upper_q);
        read(p, "trim_group_cols", cfg.preprocess.trim_group_cols);
        read(p, "min_group_rows", cfg.preprocess.min_group_rows);
        if (p.contains("propensity_clip")) {
            const auto clip = p.at("propensity_clip").get<std::vector<double>>();
            if (clip.size() != 2) throw_usage("preprocess.propensity_clip must be [lo, hi]");
            cfg.preprocess.propensity_clip_lo = clip[0];
            cfg.preprocess.propensity_clip_hi = clip[1];
        }
        read(p, "outcome_clip_frac", cfg.preprocess.outcome_clip_frac);
        cfg.preprocess.validate();
    }

    if (j.contains("basis")) {
        const json& b = j.at("basis");
        check_keys(b, "basis", {"kind", "degree", "knots", "knot_count", "normalize", "affine_shift"});
        std::string kind = "bspline";
        read(b, "kind", kind);
        if (kind == "bspline")
            cfg.basis.kind = BasisKind::bspline;
        else if (kind == "local_constant")
            cfg.basis.kind = BasisKind::local_constant;
        else
            throw_usage("basis.kind must be 'bspline' or 'local_constant'");
        read(b, "degree", cfg.basis.degree);
        read_eigen(b, "knots", cfg.basis.knots);
        read(b, "knot_count", cfg.basis.knot_count);
        read(b, "normalize", cfg.basis.normalize);
        read(b, "affine_shift", cfg.basis.affine_shift);
        if (cfg.basis.kind == BasisKind::local_constant) cfg.basis.degree = 0;
    }

    if (j.contains("solver")) {
        const json& s = j.at("solver");
        check_keys(s, "solver",
                   {"kkt_tol", "rel_obj_tol", "max_iter", "divergence_cap", "penalize_intercept"});
        read(s, "kkt_tol", cfg.solver.kkt_tol);
        read(s, "rel_obj_tol", cfg.solver.rel_obj_tol);
        read(s, "max_iter", cfg.solver.max_iter);
        read(s, "divergence_cap", cfg.solver.divergence_cap);
        read(s, "penalize_intercept", cfg.solver.penalize_intercept);
    }

    if (j.contains("penalty")) {
        const json& p = j.at("penalty");
        check_keys(p, "penalty", {"method", "c0", "eps", "n_boot", "pilot_candidates", "cv_folds",
                                  "ratio_divisor", "c0_gamma", "c0_alpha"});
        std::string method = "bootstrap";
        read(p, "method", method);
        if (method == "bootstrap")
            cfg.penalty.method = PenaltyMethod::bootstrap;
        else if (method == "cv_only")
            cfg.penalty.method = PenaltyMethod::cv_only;
        else
            throw_usage("penalty.method must be 'bootstrap' or 'cv_only'");
        read(p, "c0", cfg.penalty.c0);
        read(p, "eps", cfg.penalty.eps);
        read(p, "n_boot", cfg.penalty.n_boot);
        read_vector(p, "pilot_candidates", cfg.penalty.pilot_candidates);
        read(p, "cv_folds", cfg.penalty.cv_folds);
        read(p, "ratio_divisor", cfg.penalty.ratio_divisor);
        read_vector(p, "c0_gamma", cfg.penalty.c0_gamma);
        read_vector(p, "c0_alpha", cfg.penalty.c0_alpha);
        cfg.penalty.validate();
    }

    if (j.contains("inference")) {
        const json& i = j.at("inference");
        check_keys(i, "inference", {"eta", "grid", "n_boot"});
        read(i, "eta", cfg.inference.eta);
        read(i, "grid", cfg.inference.grid_size);
        read(i, "n_boot", cfg.inference.n_boot);
        if (!(cfg.inference.eta > 0.0 && cfg.inference.eta < 1.0))
            throw_usage("inference.eta must lie in (0,1)");
        if (cfg.inference.grid_size < 2) throw_usage("inference.grid must be at least 2");
        if (cfg.inference.n_boot < 1) throw_usage("inference.n_boot must be positive");
    }

    if (j.contains("simulation")) {
        const json& s = j.at("simulation");
        check_keys(s, "simulation", {"dgp", "n", "d_z", "sparsity", "intercept", "gamma_coefs",
                                     "gamma_scale", "reps", "eval_x", "target_treated_frac"});
        std::string dgp = "s1";
        read(s, "dgp", dgp);
        if (dgp == "s1" || dgp == "S1")
            cfg.dgp.dgp = Dgp::S1;
        else if (dgp == "s2" || dgp == "S2")
            cfg.dgp.dgp = Dgp::S2;
        else if (dgp == "s3" || dgp == "S3")
            cfg.dgp.dgp = Dgp::S3;
        else
            throw_usage("simulation.dgp must be one of s1, s2, s3");
        read(s, "n", cfg.dgp.n);
        read(s, "d_z", cfg.dgp.d_z);
        read(s, "sparsity", cfg.dgp.sparsity);
        if (s.contains("intercept") && !s.at("intercept").is_null())
            cfg.dgp.intercept = s.at("intercept").get<double>();
        read_eigen(s, "gamma_coefs", cfg.dgp.gamma_coefs);
        read(s, "gamma_scale", cfg.dgp.gamma_scale);
        read(s, "target_treated_frac", cfg.dgp.target_treated_frac);
        read(s, "reps", cfg.sim_reps);
        read(s, "eval_x", cfg.sim_eval_x);
        if (cfg.sim_reps < 1) throw_usage("simulation.reps must be positive");
    }

    if (j.contains("output")) {
        const json& o = j.at("output");
        check_keys(o, "output", {"dir"});
        read(o, "dir", cfg.out_dir);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_usage("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw_usage("config parse error in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    // threads deliberately not echoed: outputs are byte-identical across
    // worker counts and the echo must be too
    j["data"] = {
        {"path", cfg.data_path},
        {"delimiter", std::string(1, cfg.schema.delimiter)},
        {"outcome", cfg.schema.outcome},
        {"treatment", cfg.schema.treatment},
        {"conditioning", cfg.schema.conditioning},
        {"controls", cfg.schema.controls},
        {"include_conditioning_in_controls", cfg.schema.include_conditioning_in_controls},
    };
    j["preprocess"] = {
        {"normalize", cfg.preprocess.normalize},
        {"trim_lower_q", cfg.preprocess.trim_lower_q},
        {"trim_upper_q", cfg.preprocess.trim_upper_q},
        {"trim_group_cols", cfg.preprocess.trim_group_cols},
        {"min_group_rows", cfg.preprocess.min_group_rows},
        {"propensity_clip",
         std::vector<double>{cfg.preprocess.propensity_clip_lo, cfg.preprocess.propensity_clip_hi}},
        {"outcome_clip_frac", cfg.preprocess.outcome_clip_frac},
    };
    j["basis"] = {
        {"kind", cfg.basis.kind == BasisKind::bspline ? "bspline" : "local_constant"},
        {"degree", cfg.basis.degree},
        {"knots", to_vec(cfg.basis.knots)},
        {"knot_count", cfg.basis.knot_count},
        {"normalize", cfg.basis.normalize},
        {"affine_shift", cfg.basis.affine_shift},
    };
    j["solver"] = {
        {"kkt_tol", cfg.solver.kkt_tol},
        {"rel_obj_tol", cfg.solver.rel_obj_tol},
        {"max_iter", cfg.solver.max_iter},
        {"divergence_cap", cfg.solver.divergence_cap},
        {"penalize_intercept", cfg.solver.penalize_intercept},
    };
    j["penalty"] = {
        {"method", cfg.penalty.method == PenaltyMethod::bootstrap ? "bootstrap" : "cv_only"},
        {"c0", cfg.penalty.c0},
        {"eps", cfg.penalty.eps},
        {"n_boot", cfg.penalty.n_boot},
        {"pilot_candidates", cfg.penalty.pilot_candidates},
        {"cv_folds", cfg.penalty.cv_folds},
        {"ratio_divisor", cfg.penalty.ratio_divisor},
        {"c0_gamma", cfg.penalty.c0_gamma},
        {"c0_alpha", cfg.penalty.c0_alpha},
    };
    j["inference"] = {
        {"eta", cfg.inference.eta},
        {"grid", cfg.inference.grid_size},
        {"n_boot", cfg.inference.n_boot},
    };
    j["simulation"] = {
        {"dgp", dgp_name(cfg.dgp.dgp)},
        {"n", cfg.dgp.n},
        {"d_z", cfg.dgp.d_z},
        {"sparsity", cfg.dgp.sparsity},
        {"gamma_coefs", to_vec(cfg.dgp.gamma_coefs)},
        {"gamma_scale", cfg.dgp.gamma_scale},
        {"target_treated_frac", cfg.dgp.target_treated_frac},
        {"reps", cfg.sim_reps},
        {"eval_x", cfg.sim_eval_x},
    };
    if (std::isnan(cfg.dgp.intercept))
        j["simulation"]["intercept"] = nullptr;
    else
        j["simulation"]["intercept"] = cfg.dgp.intercept;
    j["output"] = {{"dir", cfg.out_dir}};
    return j;
}

}  // namespace madml
