#include "madml/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "madml/errors.hpp"
#include "madml/parallel.hpp"
#include "madml/stats.hpp"

namespace madml {

double aipw_treated(double y, double d, double pi, double m) {
    if (d == 0.0) return m;
    return y / pi - (1.0 / pi - 1.0) * m;
}

double aipw_control(double y, double d, double pi, double m) {
    if (d == 1.0) return m;
    const double q = 1.0 - pi;
    return y / q - (1.0 / q - 1.0) * m;
}

namespace {

constexpr double kExpClamp = 700.0;

inline double cexp(double t) { return std::exp(std::clamp(t, -kExpClamp, kExpClamp)); }

double clip_count(double v, double lo, double hi, long& clips) {
    if (v < lo) {
        ++clips;
        return lo;
    }
    if (v > hi) {
        ++clips;
        return hi;
    }
    return v;
}

}  // namespace

FirstStage fit_first_stage(const Dataset& ds, const BasisMatrix& basis,
                           const std::vector<PenaltySelection>& penalties, Arm arm,
                           const SolverConfig& scfg, const ClipConfig& clip, int threads) {
    const Eigen::Index n = ds.n();
    const Eigen::Index k = basis.k();
    if (basis.n() != n) throw_usage("basis and dataset row counts disagree");
    if (static_cast<Eigen::Index>(penalties.size()) != k)
        throw_usage("penalty selection count does not match basis terms");

    const double y_min = ds.y.minCoeff();
    const double y_max = ds.y.maxCoeff();
    const double y_pad = clip.outcome_frac * (y_max - y_min);
    const double m_lo = y_min - y_pad;
    const double m_hi = y_max + y_pad;

    FirstStage out;
    out.nuisances.arm = arm;
    out.nuisances.fits.resize(static_cast<std::size_t>(k));
    out.signals.values.resize(n, k);

    parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t ji) {
        const auto j = static_cast<Eigen::Index>(ji);
        const Eigen::VectorXd w = basis.first_stage_weight(j);
        const PenaltySelection& sel = penalties[ji];
        NuisanceFit fit;
        fit.lambda_gamma = sel.lambda_gamma;
        fit.lambda_alpha = sel.lambda_alpha;
        fit.c_gamma = sel.constants.c_gamma;
        fit.c_alpha = sel.constants.c_alpha;

        const Eigen::VectorXd* warm_g = sel.pilot_gamma.size() == ds.dz() ? &sel.pilot_gamma : nullptr;
        fit.gamma_diag = arm == Arm::treated
                             ? fit_calibrated_logistic_treated(w, ds.d, ds.z, sel.lambda_gamma,
                                                               scfg, warm_g)
                             : fit_calibrated_logistic_control(w, ds.d, ds.z, sel.lambda_gamma,
                                                               scfg, warm_g);
        require_converged(fit.gamma_diag, "propensity fit (basis term " + std::to_string(j) + ")");
        fit.gamma = fit.gamma_diag.coef;

        const Eigen::VectorXd ug = ds.z * fit.gamma;
        Eigen::VectorXd v(n);
        if (arm == Arm::treated)
            for (Eigen::Index i = 0; i < n; ++i) v[i] = ds.d[i] * cexp(-ug[i]);
        else
            for (Eigen::Index i = 0; i < n; ++i) v[i] = (1.0 - ds.d[i]) * cexp(ug[i]);

        const Eigen::VectorXd* warm_a = sel.pilot_alpha.size() == ds.dz() ? &sel.pilot_alpha : nullptr;
        fit.alpha_diag = fit_weighted_lasso(w, v, ds.z, ds.y, sel.lambda_alpha, scfg, warm_a);
        require_converged(fit.alpha_diag, "outcome fit (basis term " + std::to_string(j) + ")");
        fit.alpha = fit.alpha_diag.coef;

        if (warm_g) fit.bregman_gamma_vs_pilot = bregman_gamma(w, ds.d, ds.z, fit.gamma, *warm_g);
        if (warm_a) fit.bregman_alpha_vs_pilot = bregman_alpha(w, v, ds.z, fit.alpha, *warm_a);

        // clipped nuisance values and the aIPW column
        const Eigen::VectorXd um = ds.z * fit.alpha;
        Eigen::VectorXd foc = Eigen::VectorXd::Zero(ds.dz());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double pi = clip_count(logistic(ug[i]), clip.pi_lo, clip.pi_hi, fit.pi_clips);
            const double m = clip_count(um[i], m_lo, m_hi, fit.m_clips);
            double signal, gap;
            if (arm == Arm::treated) {
                signal = aipw_treated(ds.y[i], ds.d[i], pi, m);
                gap = 1.0 - ds.d[i] / pi;
            } else {
                signal = aipw_control(ds.y[i], ds.d[i], pi, m);
                gap = (1.0 - ds.d[i]) / (1.0 - pi) - 1.0;
            }
            out.signals.values(i, j) = signal;
            foc += w[i] * gap * ds.z.row(i).transpose();
        }
        fit.foc_sup_norm = foc.cwiseAbs().maxCoeff() / static_cast<double>(n);
        out.nuisances.fits[ji] = std::move(fit);
    });

    for (const auto& f : out.nuisances.fits) {
        out.signals.pi_clip_events += f.pi_clips;
        out.signals.m_clip_events += f.m_clips;
    }
    if (!out.signals.values.allFinite())
        throw_compute("aIPW signal matrix contains non-finite values");
    return out;
}

Eigen::VectorXd second_stage_beta(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                                  const Eigen::MatrixXd& signals) {
    const Eigen::Index n = basis.n();
    const Eigen::Index k = basis.k();
    if (signals.rows() != n || signals.cols() != k)
        throw_usage("signal matrix shape does not match basis");
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::VectorXd v(k);
    const double shift = basis.spec.affine_shift;
    for (Eigen::Index j = 0; j < k; ++j)
        v[j] = basis.first_stage_weight(j).dot(signals.col(j)) * inv_n;
    if (shift != 0.0) {
        // remove the constant-weight component added to the first-stage
        // weights; signal column 1 plays the reference role
        const double ref = signals.col(0).mean();
        v.array() -= shift * ref;
    }
    return qhat.ldlt().solve(v);
}

namespace {

Eigen::MatrixXd sandwich(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                         const Eigen::MatrixXd& scores) {
    // scores: n x k matrix with rows p(X_i) o eps_i
    const double inv_n = 1.0 / static_cast<double>(scores.rows());
    const Eigen::MatrixXd sigma = scores.transpose() * scores * inv_n;
    const Eigen::MatrixXd qinv = qhat.ldlt().solve(Eigen::MatrixXd::Identity(basis.k(), basis.k()));
    Eigen::MatrixXd omega = qinv * sigma * qinv;
    return 0.5 * (omega + omega.transpose());
}

}  // namespace

Eigen::MatrixXd omega_hat(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                          const Eigen::MatrixXd& signals, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd fitted = basis.values * beta;
    const Eigen::MatrixXd scores =
        basis.values.cwiseProduct(signals.colwise() - fitted);
    return sandwich(basis, qhat, scores);
}

Eigen::MatrixXd combined_omega(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                               const Eigen::MatrixXd& signals_treated,
                               const Eigen::MatrixXd& signals_control,
                               const Eigen::VectorXd& beta_treated,
                               const Eigen::VectorXd& beta_control) {
    const Eigen::VectorXd fitted_t = basis.values * beta_treated;
    const Eigen::VectorXd fitted_c = basis.values * beta_control;
    const Eigen::MatrixXd diff =
        (signals_treated.colwise() - fitted_t) - (signals_control.colwise() - fitted_c);
    return sandwich(basis, qhat, basis.values.cwiseProduct(diff));
}

double sigma_hat(const Eigen::VectorXd& p_at_x, const Eigen::MatrixXd& omega, Eigen::Index n) {
    double q = p_at_x.dot(omega * p_at_x);
    if (q < 0.0) {
        const double scale =
            std::max(1.0, omega.cwiseAbs().maxCoeff() * p_at_x.squaredNorm());
        if (q < -1e-10 * scale)
            throw_compute("sigma_hat: variance quadratic form is negative (" + std::to_string(q) + ")");
        q = 0.0;
    }
    return std::sqrt(q / static_cast<double>(n));
}

Band pointwise_band(double ghat, double sigma, double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw_usage("eta must lie in (0, 1]");
    const double z = eta == 1.0 ? 0.0 : normal_quantile(1.0 - eta / 2.0);
    return {ghat - z * sigma, ghat + z * sigma};
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& omega) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (omega + omega.transpose()));
    Eigen::VectorXd vals = eig.eigenvalues();
    const double top = std::max(vals.maxCoeff(), 0.0);
    const double floor = -1e-8 * std::max(top, 1.0);
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < floor)
            throw_compute("variance matrix has a significantly negative eigenvalue (" +
                          std::to_string(vals[i]) + ")");
        vals[i] = std::max(vals[i], 0.0);
    }
    return eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

double UniformCrit::at(double eta) const {
    if (sup_draws.empty()) throw_compute("uniform critical value: no bootstrap draws");
    if (!(eta > 0.0 && eta < 1.0)) throw_usage("eta must lie in (0,1)");
    const auto b = sup_draws.size();
    const auto rank = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil((1.0 - eta / 2.0) * static_cast<double>(b))));
    return sup_draws[std::min(rank, b) - 1];
}

UniformCrit uniform_critical_value(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& grid_basis,
                                   double eta, int n_boot, std::uint64_t seed) {
    if (grid_basis.rows() < 1) throw_usage("uniform critical value: empty grid");
    if (n_boot < 1) throw_usage("uniform critical value: n_boot must be positive");
    const Eigen::Index k = omega.rows();
    const Eigen::MatrixXd root = psd_sqrt(omega);
    const Eigen::MatrixXd a = grid_basis * root;  // g x k
    const Eigen::VectorXd norms = a.rowwise().norm();
    std::vector<Eigen::Index> valid;
    for (Eigen::Index g = 0; g < norms.size(); ++g)
        if (norms[g] > 0.0) valid.push_back(g);
    if (valid.empty())
        throw_compute("uniform critical value: sigma vanishes on the whole grid");

    UniformCrit out;
    out.sup_draws.resize(static_cast<std::size_t>(n_boot));
    Rng rng(seed);
    Eigen::VectorXd draw(k), an(grid_basis.rows());
    for (int b = 0; b < n_boot; ++b) {
        rng.fill_normal({draw.data(), static_cast<std::size_t>(k)});
        an.noalias() = a * draw;
        double sup = 0.0;
        for (const Eigen::Index g : valid) sup = std::max(sup, std::fabs(an[g]) / norms[g]);
        out.sup_draws[static_cast<std::size_t>(b)] = sup;
    }
    std::sort(out.sup_draws.begin(), out.sup_draws.end());
    out.value = out.at(eta);
    return out;
}

BasisSpec resolve_basis_spec(const BasisSpec& spec, const Eigen::VectorXd& x) {
    BasisSpec out = spec;
    if (out.knots.size() == 0) {
        const double lo = x.minCoeff();
        const double hi = x.maxCoeff();
        if (!(hi > lo)) throw_data("conditioning variable is constant; no basis support");
        out.knots = uniform_knots(lo, hi, std::max(2, out.knot_count));
    }
    return out;
}

namespace {

struct ArmRun {
    ArmFit fit;
    Eigen::MatrixXd omega;  // single-arm Omega-hat
};

ArmRun run_arm(const Dataset& ds, const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
               const FitConfig& cfg, Arm arm) {
    ArmRun out;
    out.fit.penalties =
        select_penalties(ds, basis, cfg.penalty, cfg.solver, arm, cfg.seed, cfg.threads);
    FirstStage fs =
        fit_first_stage(ds, basis, out.fit.penalties, arm, cfg.solver, cfg.clip, cfg.threads);
    out.fit.nuisances = std::move(fs.nuisances);
    out.fit.signals = std::move(fs.signals);
    out.fit.beta = second_stage_beta(basis, qhat, out.fit.signals.values);
    out.omega = omega_hat(basis, qhat, out.fit.signals.values, out.fit.beta);
    return out;
}

CateFit assemble(const Dataset& ds, const FitConfig& cfg, const BasisMatrix& basis,
                 const Eigen::MatrixXd& qhat, double min_eig, Eigen::VectorXd beta,
                 Eigen::MatrixXd omega, std::uint64_t band_tag) {
    CateFit out;
    out.basis = basis;
    out.beta = std::move(beta);
    out.omega = std::move(omega);
    out.qhat = qhat;
    out.qhat_min_eigenvalue = min_eig;
    out.eta = cfg.inference.eta;
    out.n_obs = ds.n();

    const double lo = basis.spec.knots[0];
    const double hi = basis.spec.knots[basis.spec.knots.size() - 1];
    const int g = std::max(2, cfg.inference.grid_size);
    out.grid.resize(g);
    out.grid_basis.resize(g, basis.k());
    for (int i = 0; i < g; ++i) {
        out.grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(g - 1);
        out.grid_basis.row(i) = basis.at(out.grid[i]).transpose();
    }
    out.ghat = out.grid_basis * out.beta;
    out.sigma.resize(g);
    out.pointwise_lo.resize(g);
    out.pointwise_hi.resize(g);
    out.uniform_lo.resize(g);
    out.uniform_hi.resize(g);
    for (int i = 0; i < g; ++i)
        out.sigma[i] = sigma_hat(out.grid_basis.row(i).transpose(), out.omega, ds.n());

    out.crit_draws = uniform_critical_value(out.omega, out.grid_basis, out.eta,
                                            cfg.inference.n_boot,
                                            derive_seed(cfg.seed, {rng_tag("band"), band_tag}));
    out.uniform_crit = out.crit_draws.value;
    for (int i = 0; i < g; ++i) {
        const Band pw = pointwise_band(out.ghat[i], out.sigma[i], out.eta);
        out.pointwise_lo[i] = pw.lo;
        out.pointwise_hi[i] = pw.hi;
        out.uniform_lo[i] = out.ghat[i] - out.uniform_crit * out.sigma[i];
        out.uniform_hi[i] = out.ghat[i] + out.uniform_crit * out.sigma[i];
    }
    return out;
}

}  // namespace

double CateFit::ghat_at(double x) const { return basis.at(x).dot(beta); }

double CateFit::sigma_at(double x) const { return sigma_hat(basis.at(x), omega, n_obs); }

CateFit fit_counterfactual(const Dataset& ds, const FitConfig& cfg, Arm arm) {
    ds.validate();
    const BasisSpec spec = resolve_basis_spec(cfg.basis, ds.x);
    const BasisMatrix basis = evaluate_basis(spec, ds.x);
    double min_eig = 0.0;
    const Eigen::MatrixXd qhat = design_matrix(basis, 1e-8, &min_eig);
    ArmRun run = run_arm(ds, basis, qhat, cfg, arm);
    CateFit out = assemble(ds, cfg, basis, qhat, min_eig, run.fit.beta, run.omega,
                           arm == Arm::treated ? 1 : 0);
    out.is_cate = false;
    out.arms.push_back(std::move(run.fit));
    return out;
}

CateFit fit_cate(const Dataset& ds, const FitConfig& cfg) {
    ds.validate();
    const BasisSpec spec = resolve_basis_spec(cfg.basis, ds.x);
    const BasisMatrix basis = evaluate_basis(spec, ds.x);
    double min_eig = 0.0;
    const Eigen::MatrixXd qhat = design_matrix(basis, 1e-8, &min_eig);
    ArmRun treated = run_arm(ds, basis, qhat, cfg, Arm::treated);
    ArmRun control = run_arm(ds, basis, qhat, cfg, Arm::control);
    Eigen::VectorXd beta = treated.fit.beta - control.fit.beta;
    Eigen::MatrixXd omega = combined_omega(basis, qhat, treated.fit.signals.values,
                                           control.fit.signals.values, treated.fit.beta,
                                           control.fit.beta);
    CateFit out = assemble(ds, cfg, basis, qhat, min_eig, std::move(beta), std::move(omega),
                           rng_tag("cate"));
    out.is_cate = true;
    out.arms.push_back(std::move(treated.fit));
    out.arms.push_back(std::move(control.fit));
    return out;
}

namespace {

// Held-out cross validation of the pilot constant for one benchmark loss;
// same fold layout and tie rule as the model-assisted selection.
double benchmark_cv_constant(const Dataset& ds, LossKind loss, const std::vector<double>& candidates,
                             int folds, const SolverConfig& scfg, std::uint64_t seed) {
    std::vector<double> cand = candidates;
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    if (cand.size() == 1) return cand[0];

    const auto fold_of = stratified_folds(ds.d, folds, seed);
    const double dz = static_cast<double>(ds.dz());
    const std::size_t nc = cand.size();
    std::vector<double> losses(nc, 0.0);
    std::vector<bool> ok(nc, true);

    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train_rows, held_rows;
        for (Eigen::Index i = 0; i < ds.n(); ++i)
            (fold_of[static_cast<std::size_t>(i)] == f ? held_rows : train_rows).push_back(i);
        auto take = [&](const std::vector<Eigen::Index>& rows, PenalizedProblem& p) {
            const auto m = static_cast<Eigen::Index>(rows.size());
            p.loss = loss;
            p.weights = Eigen::VectorXd::Ones(m);
            p.covariates.resize(m, ds.dz());
            p.treatment.resize(m);
            p.outcome.resize(m);
            for (Eigen::Index r = 0; r < m; ++r) {
                p.covariates.row(r) = ds.z.row(rows[static_cast<std::size_t>(r)]);
                p.treatment[r] = ds.d[rows[static_cast<std::size_t>(r)]];
                p.outcome[r] = ds.y[rows[static_cast<std::size_t>(r)]];
            }
            if (loss == LossKind::weighted_squares) p.exp_weights = p.treatment;
        };
        PenalizedProblem train, held;
        take(train_rows, train);
        take(held_rows, held);
        const double n_train = static_cast<double>(train_rows.size());
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(ds.dz());
        for (std::size_t ci = nc; ci-- > 0;) {
            train.lambda = pilot_penalty(cand[ci], dz, n_train);
            SolverResult fit = fit_penalized(train, scfg, &warm);
            if (fit.diverged) {
                ok[ci] = false;
                continue;
            }
            warm = fit.coef;
            losses[ci] += smooth_loss(held, fit.coef);
        }
    }
    std::size_t best = nc;
    for (std::size_t ci = 0; ci < nc; ++ci) {
        if (!ok[ci]) continue;
        if (best == nc || losses[ci] < losses[best] ||
            (losses[ci] == losses[best] && cand[ci] > cand[best]))
            best = ci;
    }
    if (best == nc) throw_compute("benchmark cross validation: every pilot fit diverged");
    return cand[best];
}

}  // namespace

CateFit fit_dml_benchmark(const Dataset& ds, const FitConfig& cfg) {
    ds.validate();
    const BasisSpec spec = resolve_basis_spec(cfg.basis, ds.x);
    const BasisMatrix basis = evaluate_basis(spec, ds.x);
    double min_eig = 0.0;
    const Eigen::MatrixXd qhat = design_matrix(basis, 1e-8, &min_eig);
    const Eigen::Index n = ds.n();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const double dz = static_cast<double>(ds.dz());

    std::vector<double> candidates = cfg.penalty.pilot_candidates;
    if (candidates.empty())
        for (double e : {-1.0, -0.5, 0.0, 0.5, 1.0}) candidates.push_back(std::pow(10.0, e));

    // propensity: l1 MLE
    const std::uint64_t cv_g =
        derive_seed(cfg.seed, {rng_tag("penalty.cv"), rng_tag("dml"), rng_tag("gamma")});
    const double c_g = benchmark_cv_constant(ds, LossKind::logistic_mle, candidates,
                                             cfg.penalty.cv_folds, cfg.solver, cv_g);
    SolverResult pilot_g =
        fit_logistic_mle(ones, ds.d, ds.z, pilot_penalty(c_g, dz, static_cast<double>(n)), cfg.solver);
    require_converged(pilot_g, "benchmark pilot MLE fit");

    // outcome regression on the treated: l1 OLS
    const std::uint64_t cv_a =
        derive_seed(cfg.seed, {rng_tag("penalty.cv"), rng_tag("dml"), rng_tag("alpha")});
    const double c_a = benchmark_cv_constant(ds, LossKind::weighted_squares, candidates,
                                             cfg.penalty.cv_folds, cfg.solver, cv_a);
    SolverResult pilot_a = fit_weighted_lasso(
        ones, ds.d, ds.z, ds.y, pilot_penalty(c_a, dz, static_cast<double>(n)), cfg.solver);
    require_converged(pilot_a, "benchmark pilot OLS fit");

    double lambda_g = 0.0, lambda_a = 0.0;
    {
        const Eigen::VectorXd ug = ds.z * pilot_g.coef;
        Eigen::VectorXd u_mle(n), u_ols(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            u_mle[i] = logistic(ug[i]) - ds.d[i];
            u_ols[i] = ds.d[i] * (ds.y[i] - ds.z.row(i).dot(pilot_a.coef));
        }
        Rng rng_g(derive_seed(cfg.seed, {rng_tag("penalty.boot"), rng_tag("dml"), rng_tag("gamma")}));
        Rng rng_a(derive_seed(cfg.seed, {rng_tag("penalty.boot"), rng_tag("dml"), rng_tag("alpha")}));
        lambda_g = bootstrap_penalty(u_mle, ds.z, cfg.penalty, rng_g);
        lambda_a = bootstrap_penalty(u_ols, ds.z, cfg.penalty, rng_a);
    }

    SolverResult gfit = fit_logistic_mle(ones, ds.d, ds.z, lambda_g, cfg.solver, &pilot_g.coef);
    require_converged(gfit, "benchmark MLE fit");
    SolverResult afit = fit_weighted_lasso(ones, ds.d, ds.z, ds.y, lambda_a, cfg.solver, &pilot_a.coef);
    require_converged(afit, "benchmark OLS fit");

    const double y_min = ds.y.minCoeff();
    const double y_max = ds.y.maxCoeff();
    const double pad = cfg.clip.outcome_frac * (y_max - y_min);
    NuisanceFit nf;
    nf.gamma = gfit.coef;
    nf.alpha = afit.coef;
    nf.lambda_gamma = lambda_g;
    nf.lambda_alpha = lambda_a;
    nf.c_gamma = c_g;
    nf.c_alpha = c_a;
    nf.gamma_diag = gfit;
    nf.alpha_diag = afit;

    const Eigen::VectorXd ug = ds.z * gfit.coef;
    const Eigen::VectorXd um = ds.z * afit.coef;
    Eigen::VectorXd signal(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double pi = logistic(ug[i]);
        if (pi < cfg.clip.pi_lo) {
            pi = cfg.clip.pi_lo;
            ++nf.pi_clips;
        } else if (pi > cfg.clip.pi_hi) {
            pi = cfg.clip.pi_hi;
            ++nf.pi_clips;
        }
        double m = um[i];
        if (m < y_min - pad) {
            m = y_min - pad;
            ++nf.m_clips;
        } else if (m > y_max + pad) {
            m = y_max + pad;
            ++nf.m_clips;
        }
        signal[i] = aipw_treated(ds.y[i], ds.d[i], pi, m);
    }

    ArmFit arm;
    arm.signals.values = signal.replicate(1, basis.k());
    arm.signals.pi_clip_events = nf.pi_clips;
    arm.signals.m_clip_events = nf.m_clips;
    arm.nuisances.arm = Arm::treated;
    arm.nuisances.fits.push_back(std::move(nf));
    arm.beta = second_stage_beta(basis, qhat, arm.signals.values);

    Eigen::MatrixXd omega = omega_hat(basis, qhat, arm.signals.values, arm.beta);
    CateFit out = assemble(ds, cfg, basis, qhat, min_eig, arm.beta, std::move(omega),
                           rng_tag("dml"));
    out.is_cate = false;
    out.arms.push_back(std::move(arm));
    return out;
}

}  // namespace madml
