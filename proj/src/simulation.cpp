#include "madml/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "madml/errors.hpp"
#include "madml/parallel.hpp"
#include "madml/penalty.hpp"
#include "madml/stats.hpp"

namespace madml {

std::string dgp_name(Dgp dgp) {
    switch (dgp) {
        case Dgp::S1: return "S1";
        case Dgp::S2: return "S2";
        case Dgp::S3: return "S3";
    }
    return "?";
}

int DgpConfig::effective_sparsity() const {
    if (sparsity >= 0) return sparsity;
    switch (dgp) {
        case Dgp::S1: return 6;
        case Dgp::S2: return 4;
        case Dgp::S3: return 5;
    }
    return 0;
}

Eigen::VectorXd DgpConfig::effective_gamma() const {
    const int dt = d_z - 3;
    const int s = effective_sparsity();
    if (gamma_coefs.size() > 0) {
        if (gamma_coefs.size() != dt)
            throw_usage("gamma_coefs must have d_z - 3 entries");
        return gamma_coefs;
    }
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dt);
    const double v = gamma_scale / std::sqrt(static_cast<double>(std::max(s, 1)));
    for (int i = 0; i < s; ++i) g[i] = v;
    return g;
}

void DgpConfig::validate() const {
    if (n < 10) throw_usage("simulation needs n >= 10");
    if (d_z < 4) throw_usage("simulation needs d_z >= 4 (intercept, x, x^2, controls)");
    if (effective_sparsity() > d_z - 3)
        throw_usage("sparsity cannot exceed the Toeplitz block size d_z - 3");
    if (!(target_treated_frac > 0.0 && target_treated_frac < 1.0))
        throw_usage("target treated fraction must lie in (0,1)");
}

Eigen::MatrixXd toeplitz_gaussian(Eigen::Index n, Eigen::Index d, Rng& rng) {
    if (d < 1) throw_usage("toeplitz_gaussian needs d >= 1");
    Eigen::MatrixXd cov(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k)
            cov(j, k) = std::pow(2.0, -std::abs(static_cast<double>(j - k)));
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw_compute("Toeplitz covariance is not PD");
    const Eigen::MatrixXd l = llt.matrixL();
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd g(d);
    for (Eigen::Index i = 0; i < n; ++i) {
        rng.fill_normal({g.data(), static_cast<std::size_t>(d)});
        out.row(i) = (l * g).transpose();
    }
    return out;
}

Eigen::MatrixXd transform_dagger(const Eigen::MatrixXd& z) {
    return z.array() + (1.0 + z.array()).max(0.0).square();
}

double dagger_shift_constant() {
    // E[max(0, 1+Z)^2] = 2 Phi(1) + phi(1)
    return 2.0 * normal_cdf(1.0) + normal_pdf(1.0);
}

double g0_value(double x, double shift) { return 1.0 + x + 0.5 * x * x + shift; }

namespace {

// logistic index without the intercept (the part that is subtracted)
Eigen::VectorXd propensity_index(const DgpConfig& cfg, const Eigen::VectorXd& x,
                                 const Eigen::MatrixXd& z1, const Eigen::VectorXd& gamma) {
    Eigen::VectorXd idx = x.array() + 0.5 * x.array().square();
    if (cfg.dgp == Dgp::S3)
        idx -= transform_dagger(z1) * gamma;
    else
        idx += z1 * gamma;
    return idx;
}

}  // namespace

double calibrate_intercept(const DgpConfig& cfg, std::uint64_t seed, int mc_rows) {
    cfg.validate();
    if (mc_rows < 100) throw_usage("calibration draw too small");
    Rng rng(derive_seed(seed, {rng_tag("calibrate"), static_cast<std::uint64_t>(cfg.dgp)}));
    const Eigen::VectorXd gamma = cfg.effective_gamma();
    Eigen::VectorXd x(mc_rows);
    for (int i = 0; i < mc_rows; ++i) x[i] = rng.uniform(1.0, 2.0);
    const Eigen::MatrixXd z1 = toeplitz_gaussian(mc_rows, cfg.d_z - 3, rng);
    const Eigen::VectorXd idx = propensity_index(cfg, x, z1, gamma);

    auto mean_prob = [&](double p) {
        double acc = 0.0;
        for (int i = 0; i < mc_rows; ++i) acc += logistic(idx[i] - p);
        return acc / static_cast<double>(mc_rows);
    };
    double lo = idx.minCoeff() - 40.0, hi = idx.maxCoeff() + 40.0;
    if (mean_prob(lo) < cfg.target_treated_frac || mean_prob(hi) > cfg.target_treated_frac)
        throw_compute("intercept calibration failed to bracket the target");
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        // mean_prob is decreasing in p
        (mean_prob(mid) > cfg.target_treated_frac ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SimDraw generate(const DgpConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = cfg.n;
    const Eigen::Index dt = cfg.d_z - 3;
    const Eigen::VectorXd gamma = cfg.effective_gamma();
    const double p0 = std::isnan(cfg.intercept) ? calibrate_intercept(cfg, cfg.seed) : cfg.intercept;

    Rng rng(derive_seed(cfg.seed, {rng_tag("dgp.draw")}));
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.uniform(1.0, 2.0);
    const Eigen::MatrixXd z1 = toeplitz_gaussian(n, dt, rng);

    const Eigen::VectorXd idx = propensity_index(cfg, x, z1, gamma);
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) d[i] = rng.bernoulli(logistic(idx[i] - p0)) ? 1.0 : 0.0;

    // outcome regressors: Z1 for S1/S3, the dagger transform for S2
    Eigen::VectorXd w_part(n);
    double shift = 0.0;
    if (cfg.dgp == Dgp::S2) {
        w_part = transform_dagger(z1) * gamma;
        shift = gamma.sum() * dagger_shift_constant();
    } else {
        w_part = z1 * gamma;
    }
    Eigen::VectorXd y(n), y1(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean1 = 1.0 + x[i] + 0.5 * x[i] * x[i] + w_part[i];
        const double eps = rng.normal();
        y1[i] = mean1 + eps;
        y[i] = d[i] * mean1 + eps;
    }

    SimDraw out;
    out.g0_shift = shift;
    out.intercept_used = p0;
    out.y1 = std::move(y1);
    out.pi_true.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.pi_true[i] = logistic(idx[i] - p0);
    out.data.y = std::move(y);
    out.data.d = std::move(d);
    out.data.x = x;
    out.data.z.resize(n, cfg.d_z);
    out.data.z.col(0).setOnes();
    out.data.z.col(1) = x;
    out.data.z.col(2) = x.array().square();
    out.data.z.rightCols(dt) = z1;
    out.data.z_names = {"(intercept)", "x", "x^2"};
    for (Eigen::Index j = 0; j < dt; ++j)
        out.data.z_names.push_back("z" + std::to_string(j + 1));
    out.data.validate();
    return out;
}

double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values) {
    if (grid.size() != values.size() || grid.size() < 2)
        throw_usage("trapezoid: need matching grids with at least 2 points");
    double acc = 0.0;
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i)
        acc += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
    return acc;
}

namespace {

FitConfig sim_fit_config(const FitConfig& base, std::uint64_t fit_seed) {
    FitConfig cfg = base;
    cfg.seed = fit_seed;
    // common support [1,2]: bands and curve estimates share one grid
    if (cfg.basis.knots.size() == 0)
        cfg.basis.knots = uniform_knots(1.0, 2.0, std::max(2, cfg.basis.knot_count));
    return cfg;
}

void fill_bands(RepOutcome& out, const CateFit& fit, double eval_x) {
    const Eigen::VectorXd p = fit.basis.at(eval_x);
    const double g = p.dot(fit.beta);
    const double s = sigma_hat(p, fit.omega, fit.n_obs);
    const Band b90 = pointwise_band(g, s, 0.10);
    const Band b95 = pointwise_band(g, s, 0.05);
    out.pw_lo90 = b90.lo;
    out.pw_hi90 = b90.hi;
    out.pw_lo95 = b95.lo;
    out.pw_hi95 = b95.hi;
    const double c90 = fit.crit_draws.at(0.10);
    const double c95 = fit.crit_draws.at(0.05);
    out.ghat = fit.ghat;
    out.unif_lo90 = fit.ghat - c90 * fit.sigma;
    out.unif_hi90 = fit.ghat + c90 * fit.sigma;
    out.unif_lo95 = fit.ghat - c95 * fit.sigma;
    out.unif_hi95 = fit.ghat + c95 * fit.sigma;
}

void fill_first_stage_diagnostics(RepOutcome& out, const CateFit& fit) {
    for (const auto& arm : fit.arms) {
        out.pi_clip_events += arm.signals.pi_clip_events;
        out.m_clip_events += arm.signals.m_clip_events;
        for (const auto& f : arm.nuisances.fits) {
            if (f.pi_clips > 0) continue;  // FOC identity only holds unclipped
            ++out.foc_checked;
            const double gap = f.foc_sup_norm - f.lambda_gamma;
            out.foc_worst_gap = std::max(out.foc_worst_gap, gap);
            if (gap > 1e-6) ++out.foc_violations;
        }
    }
}

}  // namespace

EstimatorAdapter make_madml_adapter(const FitConfig& base) {
    return {"MA-DML", [base](const Dataset& ds, const SimDraw&, const Eigen::VectorXd& grid,
                             double eval_x, std::uint64_t fit_seed) {
                RepOutcome out;
                FitConfig cfg = sim_fit_config(base, fit_seed);
                cfg.inference.grid_size = static_cast<int>(grid.size());
                FitConfig c2 = cfg; c2.solver.penalize_intercept = false;
                const CateFit fit = fit_counterfactual(ds, c2, Arm::treated);
                fill_bands(out, fit, eval_x);
                fill_first_stage_diagnostics(out, fit);
                out.ok = true;
                return out;
            }};
}

EstimatorAdapter make_dml_adapter(const FitConfig& base) {
    return {"DML", [base](const Dataset& ds, const SimDraw&, const Eigen::VectorXd& grid,
                          double eval_x, std::uint64_t fit_seed) {
                RepOutcome out;
                FitConfig cfg = sim_fit_config(base, fit_seed);
                cfg.inference.grid_size = static_cast<int>(grid.size());
                FitConfig c2 = cfg; c2.solver.penalize_intercept = false;
                const CateFit fit = fit_dml_benchmark(ds, c2);
                fill_bands(out, fit, eval_x);
                out.pi_clip_events = fit.arms[0].signals.pi_clip_events;
                out.m_clip_events = fit.arms[0].signals.m_clip_events;
                out.ok = true;
                return out;
            }};
}

SimulationReport run_monte_carlo(const DgpConfig& dgp, const std::vector<EstimatorAdapter>& fits,
                                 const McConfig& mc) {
    if (mc.reps < 2) throw_usage("monte carlo needs at least 2 replications");
    dgp.validate();
    const auto started = std::chrono::steady_clock::now();

    SimulationReport report;
    report.eval_x = mc.eval_x;
    report.grid.resize(mc.grid_size);
    for (int i = 0; i < mc.grid_size; ++i)
        report.grid[i] = 1.0 + static_cast<double>(i) / static_cast<double>(mc.grid_size - 1);

    // intercept calibrated once and shared across replications
    DgpConfig dgp_fixed = dgp;
    if (std::isnan(dgp_fixed.intercept))
        dgp_fixed.intercept = calibrate_intercept(dgp, dgp.seed);

    const std::size_t ne = fits.size();
    std::vector<std::vector<RepOutcome>> results(ne);
    std::vector<double> truth_shift(static_cast<std::size_t>(mc.reps), 0.0);
    for (auto& r : results) r.resize(static_cast<std::size_t>(mc.reps));

    parallel_for(static_cast<std::size_t>(mc.reps), mc.threads, [&](std::size_t rep) {
        DgpConfig rep_cfg = dgp_fixed;
        rep_cfg.seed = derive_seed(mc.seed, {rng_tag("mc.rep"), rep});
        const SimDraw draw = generate(rep_cfg);
        truth_shift[rep] = draw.g0_shift;
        for (std::size_t e = 0; e < ne; ++e) {
            const std::uint64_t fit_seed =
                derive_seed(mc.seed, {rng_tag("mc.fit"), rep, rng_tag(fits[e].name.c_str())});
            try {
                results[e][rep] = fits[e].run(draw.data, draw, report.grid, mc.eval_x, fit_seed);
            } catch (const std::exception& ex) {
                results[e][rep].ok = false;
                results[e][rep].error = ex.what();
            }
        }
    });

    const int g = mc.grid_size;
    for (std::size_t e = 0; e < ne; ++e) {
        ReportRow row;
        row.dgp = dgp_name(dgp.dgp);
        row.estimator = fits[e].name;
        row.n = dgp.n;
        row.d_z = dgp.d_z;

        std::vector<std::size_t> ok;
        for (std::size_t rep = 0; rep < results[e].size(); ++rep) {
            const RepOutcome& r = results[e][rep];
            RepDiagnostics diag;
            diag.rep = static_cast<int>(rep);
            diag.estimator = fits[e].name;
            diag.ok = r.ok;
            diag.error = r.error;
            if (r.ok) {
                ok.push_back(rep);
                const double shift = truth_shift[rep];
                const double g0_eval = g0_value(mc.eval_x, shift);
                diag.cov90 = r.pw_lo90 <= g0_eval && g0_eval <= r.pw_hi90;
                diag.cov95 = r.pw_lo95 <= g0_eval && g0_eval <= r.pw_hi95;
                diag.ucov90 = true;
                diag.ucov95 = true;
                for (int i = 0; i < g; ++i) {
                    const double t = g0_value(report.grid[i], shift);
                    diag.ucov90 = diag.ucov90 && r.unif_lo90[i] <= t && t <= r.unif_hi90[i];
                    diag.ucov95 = diag.ucov95 && r.unif_lo95[i] <= t && t <= r.unif_hi95[i];
                }
                diag.pi_clip_events = r.pi_clip_events;
                diag.m_clip_events = r.m_clip_events;
                diag.foc_violations = r.foc_violations;
                row.cov90 += diag.cov90;
                row.cov95 += diag.cov95;
                row.ucov90 += diag.ucov90;
                row.ucov95 += diag.ucov95;
                row.pi_clip_events += r.pi_clip_events;
                row.m_clip_events += r.m_clip_events;
                row.foc_checked += r.foc_checked;
                row.foc_violations += r.foc_violations;
                row.foc_worst_gap = std::max(row.foc_worst_gap, r.foc_worst_gap);
            } else {
                ++row.failures;
            }
            report.per_rep.push_back(std::move(diag));
        }
        row.reps_completed = static_cast<int>(ok.size());
        if (row.reps_completed == 0) throw_compute("every replication failed for " + row.estimator);
        row.valid = row.failures <= mc.invalid_failure_frac * static_cast<double>(mc.reps);

        const double inv_s = 1.0 / static_cast<double>(row.reps_completed);
        row.cov90 *= inv_s;
        row.cov95 *= inv_s;
        row.ucov90 *= inv_s;
        row.ucov95 *= inv_s;

        Eigen::VectorXd gbar = Eigen::VectorXd::Zero(g);
        for (const std::size_t rep : ok) gbar += results[e][rep].ghat;
        gbar *= inv_s;

        Eigen::VectorXd g0(g);
        double ivar = 0.0, imse = 0.0;
        for (const std::size_t rep : ok) {
            for (int i = 0; i < g; ++i) g0[i] = g0_value(report.grid[i], truth_shift[rep]);
            const Eigen::VectorXd& gh = results[e][rep].ghat;
            ivar += trapezoid(report.grid, (gh - gbar).array().square());
            imse += trapezoid(report.grid, (gh - g0).array().square());
        }
        row.ivar = ivar * inv_s;
        row.imse = imse * inv_s;
        // truth is deterministic given the regime, so any rep's shift works
        for (int i = 0; i < g; ++i) g0[i] = g0_value(report.grid[i], truth_shift[ok.front()]);
        row.ibias2 = trapezoid(report.grid, (gbar - g0).array().square());

        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace madml
