#include "madml/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "madml/errors.hpp"

namespace madml {

using nlohmann::json;

namespace {

std::string fmt10(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw_data("cannot open '" + path + "' for writing");
    return out;
}

json vec_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

json mat_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json arm_json(const ArmFit& arm) {
    json fits = json::array();
    for (const auto& f : arm.nuisances.fits) {
        fits.push_back({
            {"lambda_gamma", f.lambda_gamma},
            {"lambda_alpha", f.lambda_alpha},
            {"c_gamma", f.c_gamma},
            {"c_alpha", f.c_alpha},
            {"gamma", vec_json(f.gamma)},
            {"alpha", vec_json(f.alpha)},
            {"gamma_kkt", f.gamma_diag.kkt_residual},
            {"alpha_kkt", f.alpha_diag.kkt_residual},
            {"gamma_iterations", f.gamma_diag.iterations},
            {"alpha_iterations", f.alpha_diag.iterations},
            {"bregman_gamma_vs_pilot", f.bregman_gamma_vs_pilot},
            {"bregman_alpha_vs_pilot", f.bregman_alpha_vs_pilot},
            {"foc_sup_norm", f.foc_sup_norm},
            {"pi_clips", f.pi_clips},
            {"m_clips", f.m_clips},
        });
    }
    return {
        {"arm", arm.nuisances.arm == Arm::treated ? "treated" : "control"},
        {"beta", vec_json(arm.beta)},
        {"pi_clip_events", arm.signals.pi_clip_events},
        {"m_clip_events", arm.signals.m_clip_events},
        {"fits", std::move(fits)},
    };
}

}  // namespace

void write_fit_grid_csv(const CateFit& fit, const std::string& path,
                        const std::string& value_name) {
    auto out = open_out(path);
    out << "x," << value_name << ",sigma,pw_lo,pw_hi,unif_lo,unif_hi\n";
    for (Eigen::Index i = 0; i < fit.grid.size(); ++i) {
        out << fmt10(fit.grid[i]) << ',' << fmt10(fit.ghat[i]) << ',' << fmt10(fit.sigma[i]) << ','
            << fmt10(fit.pointwise_lo[i]) << ',' << fmt10(fit.pointwise_hi[i]) << ','
            << fmt10(fit.uniform_lo[i]) << ',' << fmt10(fit.uniform_hi[i]) << '\n';
    }
}

void write_fit_json(const CateFit& fit, const RunConfig& effective, const std::string& path) {
    json j;
    j["kind"] = fit.is_cate ? "cate" : "counterfactual_mean";
    j["eta"] = fit.eta;
    j["n"] = fit.n_obs;
    j["k"] = fit.beta.size();
    j["beta"] = vec_json(fit.beta);
    j["omega"] = mat_json(fit.omega);
    j["qhat_min_eigenvalue"] = fit.qhat_min_eigenvalue;
    j["uniform_critical_value"] = fit.uniform_crit;
    j["basis"] = {
        {"kind", fit.basis.spec.kind == BasisKind::bspline ? "bspline" : "local_constant"},
        {"degree", fit.basis.spec.degree},
        {"knots", vec_json(fit.basis.spec.knots)},
        {"normalize", fit.basis.spec.normalize},
        {"affine_shift", fit.basis.spec.affine_shift},
        {"column_norms", vec_json(fit.basis.column_norms)},
        {"xi_inf", fit.basis.xi_inf},
        {"xi_2", fit.basis.xi_2},
    };
    j["grid"] = {
        {"x", vec_json(fit.grid)},        {"ghat", vec_json(fit.ghat)},
        {"sigma", vec_json(fit.sigma)},   {"pw_lo", vec_json(fit.pointwise_lo)},
        {"pw_hi", vec_json(fit.pointwise_hi)}, {"unif_lo", vec_json(fit.uniform_lo)},
        {"unif_hi", vec_json(fit.uniform_hi)},
    };
    json arms = json::array();
    for (const auto& a : fit.arms) arms.push_back(arm_json(a));
    j["arms"] = std::move(arms);
    j["config"] = run_config_to_json(effective);
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

void write_report_csv(const SimulationReport& report, const std::string& path) {
    auto out = open_out(path);
    out << "dgp,estimator,n,d_z,ibias2,ivar,imse,cov90,cov95,ucov90,ucov95,"
           "reps_completed,failures,valid\n";
    for (const auto& r : report.rows) {
        out << r.dgp << ',' << r.estimator << ',' << r.n << ',' << r.d_z << ',' << fmt10(r.ibias2)
            << ',' << fmt10(r.ivar) << ',' << fmt10(r.imse) << ',' << fmt10(r.cov90) << ','
            << fmt10(r.cov95) << ',' << fmt10(r.ucov90) << ',' << fmt10(r.ucov95) << ','
            << r.reps_completed << ',' << r.failures << ',' << (r.valid ? 1 : 0) << '\n';
    }
}

void write_report_json(const SimulationReport& report, const RunConfig& effective,
                       const std::string& path) {
    json j;
    j["eval_x"] = report.eval_x;
    j["grid"] = vec_json(report.grid);
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({
            {"dgp", r.dgp},
            {"estimator", r.estimator},
            {"n", r.n},
            {"d_z", r.d_z},
            {"ibias2", r.ibias2},
            {"ivar", r.ivar},
            {"imse", r.imse},
            {"cov90", r.cov90},
            {"cov95", r.cov95},
            {"ucov90", r.ucov90},
            {"ucov95", r.ucov95},
            {"reps_completed", r.reps_completed},
            {"failures", r.failures},
            {"valid", r.valid},
            {"pi_clip_events", r.pi_clip_events},
            {"m_clip_events", r.m_clip_events},
            {"foc_checked", r.foc_checked},
            {"foc_violations", r.foc_violations},
            {"foc_worst_gap", r.foc_worst_gap},
        });
    }
    j["rows"] = std::move(rows);
    json reps = json::array();
    for (const auto& d : report.per_rep) {
        reps.push_back({
            {"rep", d.rep},
            {"estimator", d.estimator},
            {"ok", d.ok},
            {"error", d.error},
            {"cov90", d.cov90},
            {"cov95", d.cov95},
            {"ucov90", d.ucov90},
            {"ucov95", d.ucov95},
            {"pi_clip_events", d.pi_clip_events},
            {"m_clip_events", d.m_clip_events},
            {"foc_violations", d.foc_violations},
        });
    }
    j["replications"] = std::move(reps);
    j["config"] = run_config_to_json(effective);
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

std::string fit_summary(const CateFit& fit) {
    std::ostringstream os;
    os << (fit.is_cate ? "cate" : "counterfactual mean") << " fit: n=" << fit.n_obs
       << " k=" << fit.beta.size() << " eta=" << fit.eta
       << " uniform_crit=" << fmt10(fit.uniform_crit)
       << " qhat_min_eig=" << fmt10(fit.qhat_min_eigenvalue) << '\n';
    for (const auto& arm : fit.arms) {
        os << "  " << (arm.nuisances.arm == Arm::treated ? "treated" : "control")
           << " arm: pi_clips=" << arm.signals.pi_clip_events
           << " m_clips=" << arm.signals.m_clip_events << " lambda_gamma=[";
        for (std::size_t i = 0; i < arm.nuisances.fits.size(); ++i)
            os << (i ? " " : "") << fmt10(arm.nuisances.fits[i].lambda_gamma);
        os << "] lambda_alpha=[";
        for (std::size_t i = 0; i < arm.nuisances.fits.size(); ++i)
            os << (i ? " " : "") << fmt10(arm.nuisances.fits[i].lambda_alpha);
        os << "]\n";
    }
    return os.str();
}

std::string report_summary(const SimulationReport& report) {
    std::ostringstream os;
    os << "dgp estimator n ibias2 ivar imse cov90 cov95 ucov90 ucov95 reps fail\n";
    for (const auto& r : report.rows) {
        os << r.dgp << ' ' << r.estimator << ' ' << r.n << ' ' << fmt10(r.ibias2) << ' '
           << fmt10(r.ivar) << ' ' << fmt10(r.imse) << ' ' << fmt10(r.cov90) << ' '
           << fmt10(r.cov95) << ' ' << fmt10(r.ucov90) << ' ' << fmt10(r.ucov95) << ' '
           << r.reps_completed << ' ' << r.failures << " (" << fmt10(r.wall_seconds) << "s)\n";
    }
    return os.str();
}

}  // namespace madml
