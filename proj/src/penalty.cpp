#include "madml/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "madml/errors.hpp"
#include "madml/parallel.hpp"

namespace madml {

namespace {

constexpr double kExpClamp = 700.0;

inline double cexp(double t) { return std::exp(std::clamp(t, -kExpClamp, kExpClamp)); }

// exp-weights for the outcome regression: D e^{-g'Z} (treated arm),
// (1-D) e^{g'Z} (control arm)
Eigen::VectorXd exp_weights_for(const Eigen::VectorXd& d, const Eigen::MatrixXd& z,
                                const Eigen::VectorXd& gamma, Arm arm) {
    Eigen::VectorXd u = z * gamma;
    Eigen::VectorXd v(u.size());
    if (arm == Arm::treated)
        for (Eigen::Index i = 0; i < u.size(); ++i) v[i] = d[i] * cexp(-u[i]);
    else
        for (Eigen::Index i = 0; i < u.size(); ++i) v[i] = (1.0 - d[i]) * cexp(u[i]);
    return v;
}

LossKind gamma_loss_for(Arm arm) {
    return arm == Arm::treated ? LossKind::calibrated_logistic_treated
                               : LossKind::calibrated_logistic_control;
}

struct RowSubset {
    Eigen::VectorXd w, d, y;
    Eigen::MatrixXd z;
};

RowSubset subset(const Eigen::VectorXd& w, const Dataset& ds, const std::vector<int>& fold_of,
                 int fold, bool held_out) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < ds.n(); ++i)
        if ((fold_of[static_cast<std::size_t>(i)] == fold) == held_out) rows.push_back(i);
    RowSubset s;
    const auto m = static_cast<Eigen::Index>(rows.size());
    s.w.resize(m);
    s.d.resize(m);
    s.y.resize(m);
    s.z.resize(m, ds.dz());
    for (Eigen::Index r = 0; r < m; ++r) {
        s.w[r] = w[rows[static_cast<std::size_t>(r)]];
        s.d[r] = ds.d[rows[static_cast<std::size_t>(r)]];
        s.y[r] = ds.y[rows[static_cast<std::size_t>(r)]];
        s.z.row(r) = ds.z.row(rows[static_cast<std::size_t>(r)]);
    }
    return s;
}

}  // namespace

void PenaltyConfig::validate() const {
    if (!(c0 > 1.0)) throw_usage("penalty c0 must exceed 1");
    if (!(eps > 0.0 && eps < 1.0)) throw_usage("penalty eps must lie in (0,1)");
    if (n_boot < 1) throw_usage("penalty n_boot must be at least 1");
    if (cv_folds < 2) throw_usage("penalty cv_folds must be at least 2");
    if (!(ratio_divisor > 0.0)) throw_usage("penalty ratio_divisor must be positive");
    for (double c : pilot_candidates)
        if (!(c > 0.0)) throw_usage("pilot candidates must be positive");
}

double pilot_penalty(double c, double dz, double n) {
    if (!(c > 0.0)) throw_usage("pilot constant must be positive");
    if (!(dz >= 2.0)) throw_usage("pilot penalty needs d_z >= 2");
    if (!(n >= 1.0)) throw_usage("pilot penalty needs n >= 1");
    const double l = std::log(dz);
    return c * std::sqrt(l * l * l / n);
}

double enforce_ratio(double lambda_gamma, double lambda_alpha, double divisor) {
    if (!(divisor > 0.0)) throw_usage("ratio divisor must be positive");
    return std::max(lambda_gamma / divisor, lambda_alpha);
}

std::vector<double> default_pilot_candidates(const BasisMatrix& basis) {
    const double scale = basis.xi_inf + basis.spec.affine_shift;
    std::vector<double> out;
    for (double e : {-1.0, -0.5, 0.0, 0.5, 1.0}) out.push_back(scale * std::pow(10.0, e));
    return out;
}

std::vector<double> cv_candidate_grid(const BasisMatrix& basis, const Eigen::MatrixXd& z,
                                      int count) {
    if (count < 1) throw_usage("cv candidate count must be positive");
    const double n = static_cast<double>(z.rows());
    const double dz = static_cast<double>(z.cols());
    const double root_log = std::sqrt(std::log(dz * n));
    const double base = (basis.xi_inf + basis.spec.affine_shift) * z.array().abs().maxCoeff();
    const double lo = base / (2.0 * root_log);
    const double hi = 1.5 * root_log * base;
    std::vector<double> out;
    if (count == 1) {
        out.push_back(0.5 * (lo + hi));
        return out;
    }
    for (int i = 0; i < count; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return out;
}

std::vector<int> stratified_folds(const Eigen::VectorXd& d, int folds, std::uint64_t seed) {
    const auto n = d.size();
    std::vector<Eigen::Index> treated, control;
    for (Eigen::Index i = 0; i < n; ++i) (d[i] == 1.0 ? treated : control).push_back(i);
    if (static_cast<int>(treated.size()) < folds || static_cast<int>(control.size()) < folds)
        throw_data("cannot form " + std::to_string(folds) +
                   " folds with both treatment arms present in each");
    Rng rng(seed);
    auto shuffle = [&](std::vector<Eigen::Index>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[rng.next_u64() % i]);
    };
    shuffle(treated);
    shuffle(control);
    std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < treated.size(); ++i)
        fold_of[static_cast<std::size_t>(treated[i])] = static_cast<int>(i % folds);
    for (std::size_t i = 0; i < control.size(); ++i)
        fold_of[static_cast<std::size_t>(control[i])] = static_cast<int>(i % folds);
    return fold_of;
}

ConstantPair cv_select_constants(const Dataset& ds, const BasisMatrix& basis, Eigen::Index j,
                                 const std::vector<double>& candidates, int folds, Arm arm,
                                 const SolverConfig& scfg, std::uint64_t seed) {
    if (candidates.empty()) throw_usage("cv_select_constants: no candidates");
    std::vector<double> cand = candidates;
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    if (cand.size() == 1) return {cand[0], cand[0]};

    const Eigen::VectorXd w = basis.first_stage_weight(j);
    const auto fold_of = stratified_folds(ds.d, folds, seed);
    const double dz = static_cast<double>(ds.dz());
    const std::size_t nc = cand.size();

    // gamma: fit every candidate on every training split, score held out.
    // Larger penalties are fit first so each fit warm-starts the next.
    std::vector<std::vector<Eigen::VectorXd>> gamma_fit(nc);  // [cand][fold]
    std::vector<double> gamma_loss(nc, 0.0);
    std::vector<bool> gamma_ok(nc, true);
    for (auto& g : gamma_fit) g.resize(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        const RowSubset train = subset(w, ds, fold_of, f, false);
        const RowSubset held = subset(w, ds, fold_of, f, true);
        const double n_train = static_cast<double>(train.d.size());
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(ds.dz());
        for (std::size_t ci = nc; ci-- > 0;) {
            const double lambda = pilot_penalty(cand[ci], dz, n_train);
            SolverResult fit =
                arm == Arm::treated
                    ? fit_calibrated_logistic_treated(train.w, train.d, train.z, lambda, scfg, &warm)
                    : fit_calibrated_logistic_control(train.w, train.d, train.z, lambda, scfg, &warm);
            if (fit.diverged) {
                gamma_ok[ci] = false;
                continue;
            }
            warm = fit.coef;
            gamma_fit[ci][static_cast<std::size_t>(f)] = fit.coef;
            PenalizedProblem held_p;
            held_p.loss = gamma_loss_for(arm);
            held_p.weights = held.w;
            held_p.treatment = held.d;
            held_p.covariates = held.z;
            gamma_loss[ci] += smooth_loss(held_p, fit.coef);
        }
    }

    auto pick = [&](const std::vector<double>& loss, const std::vector<bool>& ok) -> std::size_t {
        std::size_t best = nc;
        for (std::size_t ci = 0; ci < nc; ++ci) {
            if (!ok[ci]) continue;
            if (best == nc || loss[ci] < loss[best] ||
                (loss[ci] == loss[best] && cand[ci] > cand[best]))
                best = ci;
        }
        if (best == nc)
            throw_compute("cross validation: every candidate pilot fit diverged for basis term " +
                          std::to_string(j));
        return best;
    };
    const std::size_t gi = pick(gamma_loss, gamma_ok);

    // alpha: exp-weights come from the chosen gamma fit of the same split
    std::vector<double> alpha_loss(nc, 0.0);
    std::vector<bool> alpha_ok(nc, true);
    for (int f = 0; f < folds; ++f) {
        const RowSubset train = subset(w, ds, fold_of, f, false);
        const RowSubset held = subset(w, ds, fold_of, f, true);
        const double n_train = static_cast<double>(train.d.size());
        const Eigen::VectorXd& gamma = gamma_fit[gi][static_cast<std::size_t>(f)];
        const Eigen::VectorXd v_train = exp_weights_for(train.d, train.z, gamma, arm);
        const Eigen::VectorXd v_held = exp_weights_for(held.d, held.z, gamma, arm);
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(ds.dz());
        for (std::size_t ci = nc; ci-- > 0;) {
            const double lambda = pilot_penalty(cand[ci], dz, n_train);
            SolverResult fit = fit_weighted_lasso(train.w, v_train, train.z, train.y, lambda, scfg, &warm);
            if (fit.diverged) {
                alpha_ok[ci] = false;
                continue;
            }
            warm = fit.coef;
            PenalizedProblem held_p;
            held_p.loss = LossKind::weighted_squares;
            held_p.weights = held.w;
            held_p.exp_weights = v_held;
            held_p.covariates = held.z;
            held_p.outcome = held.y;
            alpha_loss[ci] += smooth_loss(held_p, fit.coef);
        }
    }
    const std::size_t ai = pick(alpha_loss, alpha_ok);
    return {cand[gi], cand[ai]};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> estimate_residuals(
    const Dataset& ds, const Eigen::VectorXd& w, const Eigen::VectorXd& gamma,
    const Eigen::VectorXd& alpha, Arm arm) {
    const Eigen::Index n = ds.n();
    const Eigen::VectorXd ug = ds.z * gamma;
    const Eigen::VectorXd ua = ds.z * alpha;
    Eigen::VectorXd r_gamma(n), r_alpha(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (arm == Arm::treated) {
            const double e = cexp(-ug[i]);
            r_gamma[i] = -w[i] * (ds.d[i] * e + (1.0 - ds.d[i]));
            r_alpha[i] = w[i] * ds.d[i] * e * (ds.y[i] - ua[i]);
        } else {
            const double e = cexp(ug[i]);
            r_gamma[i] = -w[i] * ((1.0 - ds.d[i]) * e + ds.d[i]);
            r_alpha[i] = w[i] * (1.0 - ds.d[i]) * e * (ds.y[i] - ua[i]);
        }
    }
    return {r_gamma, r_alpha};
}

double bootstrap_penalty(const Eigen::VectorXd& u, const Eigen::MatrixXd& z,
                         const PenaltyConfig& cfg, Rng& rng, double c0_override) {
    const Eigen::Index n = z.rows();
    if (u.size() != n) throw_usage("bootstrap_penalty: residual length mismatch");
    const int b_total = cfg.n_boot;
    const double inv_n = 1.0 / static_cast<double>(n);
    const double c0 = c0_override > 0.0 ? c0_override : cfg.c0;

    // scores scaled by the residuals once; each draw is then one mat-vec
    const Eigen::MatrixXd zu = z.array().colwise() * u.array();  // n x d_z

    std::vector<double> stats(static_cast<std::size_t>(b_total));
    const Eigen::Index chunk = std::min<Eigen::Index>(2048, b_total);
    Eigen::MatrixXd e(n, chunk);
    Eigen::MatrixXd m(z.cols(), chunk);
    for (int done = 0; done < b_total;) {
        const Eigen::Index bs = std::min<Eigen::Index>(chunk, b_total - done);
        for (Eigen::Index b = 0; b < bs; ++b)
            rng.fill_normal({e.col(b).data(), static_cast<std::size_t>(n)});
        m.leftCols(bs).noalias() = zu.transpose() * e.leftCols(bs);
        for (Eigen::Index b = 0; b < bs; ++b)
            stats[static_cast<std::size_t>(done + b)] = m.col(b).cwiseAbs().maxCoeff() * inv_n;
        done += static_cast<int>(bs);
    }

    // ceil((1-eps) B) order statistic, clamped to [1, B]
    const auto rank = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil((1.0 - cfg.eps) * static_cast<double>(b_total))));
    std::nth_element(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                     stats.end());
    return c0 * stats[rank - 1];
}

std::vector<PenaltySelection> select_penalties(const Dataset& ds, const BasisMatrix& basis,
                                               const PenaltyConfig& pcfg, const SolverConfig& scfg,
                                               Arm arm, std::uint64_t master_seed, int threads) {
    pcfg.validate();
    const Eigen::Index k = basis.k();
    const double dz = static_cast<double>(ds.dz());
    const double n = static_cast<double>(ds.n());
    const std::uint64_t arm_tag = arm == Arm::treated ? 1 : 0;
    if (!pcfg.c0_gamma.empty() && static_cast<Eigen::Index>(pcfg.c0_gamma.size()) != k)
        throw_usage("c0_gamma override must have one entry per basis term");
    if (!pcfg.c0_alpha.empty() && static_cast<Eigen::Index>(pcfg.c0_alpha.size()) != k)
        throw_usage("c0_alpha override must have one entry per basis term");

    std::vector<double> candidates = pcfg.pilot_candidates;
    if (candidates.empty())
        candidates = pcfg.method == PenaltyMethod::bootstrap
                         ? default_pilot_candidates(basis)
                         : cv_candidate_grid(basis, ds.z);

    std::vector<PenaltySelection> out(static_cast<std::size_t>(k));
    parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t ji) {
        const auto j = static_cast<Eigen::Index>(ji);
        PenaltySelection sel;
        const std::uint64_t cv_seed =
            derive_seed(master_seed, {rng_tag("penalty.cv"), arm_tag, static_cast<std::uint64_t>(j)});
        sel.constants =
            cv_select_constants(ds, basis, j, candidates, pcfg.cv_folds, arm, scfg, cv_seed);

        const Eigen::VectorXd w = basis.first_stage_weight(j);
        const double pilot_g = pilot_penalty(sel.constants.c_gamma, dz, n);
        const double pilot_a = pilot_penalty(sel.constants.c_alpha, dz, n);

        SolverResult gfit = arm == Arm::treated
                                ? fit_calibrated_logistic_treated(w, ds.d, ds.z, pilot_g, scfg)
                                : fit_calibrated_logistic_control(w, ds.d, ds.z, pilot_g, scfg);
        require_converged(gfit, "pilot propensity fit (basis term " + std::to_string(j) + ")");
        const Eigen::VectorXd v = exp_weights_for(ds.d, ds.z, gfit.coef, arm);
        SolverResult afit = fit_weighted_lasso(w, v, ds.z, ds.y, pilot_a, scfg);
        require_converged(afit, "pilot outcome fit (basis term " + std::to_string(j) + ")");
        sel.pilot_gamma = gfit.coef;
        sel.pilot_alpha = afit.coef;

        if (pcfg.method == PenaltyMethod::bootstrap) {
            const auto [u_gamma, u_alpha] =
                estimate_residuals(ds, w, gfit.coef, afit.coef, arm);
            const double c0g = pcfg.c0_gamma.empty() ? pcfg.c0 : pcfg.c0_gamma[ji];
            const double c0a = pcfg.c0_alpha.empty() ? pcfg.c0 : pcfg.c0_alpha[ji];
            Rng rng_g(derive_seed(master_seed, {rng_tag("penalty.boot"), arm_tag,
                                                static_cast<std::uint64_t>(j), rng_tag("gamma")}));
            Rng rng_a(derive_seed(master_seed, {rng_tag("penalty.boot"), arm_tag,
                                                static_cast<std::uint64_t>(j), rng_tag("alpha")}));
            sel.lambda_gamma = bootstrap_penalty(u_gamma, ds.z, pcfg, rng_g, c0g);
            sel.lambda_alpha = bootstrap_penalty(u_alpha, ds.z, pcfg, rng_a, c0a);
        } else {
            sel.lambda_gamma = pilot_g;
            sel.lambda_alpha = pilot_a;
        }
        sel.lambda_alpha = enforce_ratio(sel.lambda_gamma, sel.lambda_alpha, pcfg.ratio_divisor);
        out[ji] = std::move(sel);
    });
    return out;
}

}  // namespace madml
