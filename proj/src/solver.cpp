#include "madml/solver.hpp"

#include <algorithm>
#include <cmath>

#include "madml/errors.hpp"

namespace madml {

namespace {

// IEEE-double overflow guard for the exponential losses; activations are
// reported via SolverResult::clamped_exponents.
constexpr double kExpClamp = 700.0;

inline double clamped_exp(double t, long& clamps) {
    if (t > kExpClamp) {
        ++clamps;
        t = kExpClamp;
    } else if (t < -kExpClamp) {
        ++clamps;
        t = -kExpClamp;
    }
    return std::exp(t);
}

inline double softplus(double t) {
    return std::log1p(std::exp(-std::fabs(t))) + std::max(t, 0.0);
}

inline double soft_threshold(double t, double cut) {
    if (t > cut) return t - cut;
    if (t < -cut) return t + cut;
    return 0.0;
}

double penalty_term(const PenalizedProblem& p, const Eigen::VectorXd& coef) {
    double s = coef.lpNorm<1>();
    if (!p.penalize_intercept && coef.size() > 0) s -= std::fabs(coef[0]);
    return p.lambda * s;
}

// Loss value and the per-observation residual r such that the smooth
// gradient is Z' r / n, both at u = Z coef.
struct LossAtPoint {
    double value = 0.0;
    Eigen::VectorXd resid;
};

double loss_from_index(const PenalizedProblem& p, const Eigen::VectorXd& u, long& clamps) {
    const auto n = u.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    double acc = 0.0;
    switch (p.loss) {
        case LossKind::calibrated_logistic_treated:
            for (Eigen::Index i = 0; i < n; ++i)
                acc += p.weights[i] *
                       (p.treatment[i] * clamped_exp(-u[i], clamps) + (1.0 - p.treatment[i]) * u[i]);
            break;
        case LossKind::calibrated_logistic_control:
            for (Eigen::Index i = 0; i < n; ++i)
                acc += p.weights[i] *
                       ((1.0 - p.treatment[i]) * clamped_exp(u[i], clamps) - p.treatment[i] * u[i]);
            break;
        case LossKind::logistic_mle:
            for (Eigen::Index i = 0; i < n; ++i)
                acc += p.weights[i] * (softplus(u[i]) - p.treatment[i] * u[i]);
            break;
        case LossKind::weighted_squares:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = p.outcome[i] - u[i];
                acc += 0.5 * p.weights[i] * p.exp_weights[i] * r * r;
            }
            break;
    }
    return acc * inv_n;
}

LossAtPoint loss_and_resid(const PenalizedProblem& p, const Eigen::VectorXd& u, long& clamps) {
    LossAtPoint out;
    const auto n = u.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    out.resid.resize(n);
    double acc = 0.0;
    switch (p.loss) {
        case LossKind::calibrated_logistic_treated:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double e = clamped_exp(-u[i], clamps);
                acc += p.weights[i] * (p.treatment[i] * e + (1.0 - p.treatment[i]) * u[i]);
                out.resid[i] = p.weights[i] * ((1.0 - p.treatment[i]) - p.treatment[i] * e);
            }
            break;
        case LossKind::calibrated_logistic_control:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double e = clamped_exp(u[i], clamps);
                acc += p.weights[i] * ((1.0 - p.treatment[i]) * e - p.treatment[i] * u[i]);
                out.resid[i] = p.weights[i] * ((1.0 - p.treatment[i]) * e - p.treatment[i]);
            }
            break;
        case LossKind::logistic_mle:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double pi = 1.0 / (1.0 + std::exp(-std::clamp(u[i], -kExpClamp, kExpClamp)));
                acc += p.weights[i] * (softplus(u[i]) - p.treatment[i] * u[i]);
                out.resid[i] = p.weights[i] * (pi - p.treatment[i]);
            }
            break;
        case LossKind::weighted_squares:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = p.outcome[i] - u[i];
                acc += 0.5 * p.weights[i] * p.exp_weights[i] * r * r;
                out.resid[i] = -p.weights[i] * p.exp_weights[i] * r;
            }
            break;
    }
    out.value = acc * inv_n;
    return out;
}

double kkt_from_gradient(const Eigen::VectorXd& grad, const Eigen::VectorXd& coef, double lambda,
                         bool penalize_intercept) {
    double worst = 0.0;
    for (Eigen::Index l = 0; l < coef.size(); ++l) {
        double r;
        if (!penalize_intercept && l == 0) {
            r = std::fabs(grad[l]);
        } else if (coef[l] == 0.0) {
            r = std::max(std::fabs(grad[l]) - lambda, 0.0);
        } else {
            r = std::fabs(grad[l] + lambda * (coef[l] > 0.0 ? 1.0 : -1.0));
        }
        worst = std::max(worst, r);
    }
    return worst;
}

// Hessian of the smooth loss restricted to the coordinates in `active`.
Eigen::MatrixXd active_hessian(const PenalizedProblem& p, const Eigen::VectorXd& u,
                               const std::vector<Eigen::Index>& active) {
    const Eigen::Index n = p.covariates.rows();
    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::VectorXd curv(n);
    switch (p.loss) {
        case LossKind::calibrated_logistic_treated:
            for (Eigen::Index i = 0; i < n; ++i)
                curv[i] = p.weights[i] * p.treatment[i] * std::exp(std::clamp(-u[i], -kExpClamp, kExpClamp));
            break;
        case LossKind::calibrated_logistic_control:
            for (Eigen::Index i = 0; i < n; ++i)
                curv[i] = p.weights[i] * (1.0 - p.treatment[i]) *
                          std::exp(std::clamp(u[i], -kExpClamp, kExpClamp));
            break;
        case LossKind::logistic_mle:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double pi = 1.0 / (1.0 + std::exp(-std::clamp(u[i], -kExpClamp, kExpClamp)));
                curv[i] = p.weights[i] * pi * (1.0 - pi);
            }
            break;
        case LossKind::weighted_squares:
            curv = p.weights.cwiseProduct(p.exp_weights);
            break;
    }
    Eigen::MatrixXd zs(n, m);
    for (Eigen::Index c = 0; c < m; ++c) zs.col(c) = p.covariates.col(active[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd h = zs.transpose() * curv.asDiagonal() * zs / static_cast<double>(n);
    return h;
}

// Sign-restricted Newton refinement on the active set. Ill-conditioned
// designs leave first-order methods inching through a flat valley with the
// subgradient condition still violated; a few Newton rounds on the frozen
// sparsity pattern reach it at machine precision. Steps are accepted only
// if the true penalized objective does not increase, so global monotone
// convergence is untouched.
bool newton_polish(const PenalizedProblem& p, const SolverConfig& cfg, Eigen::VectorXd& coef,
                   double& full_obj, long& clamps) {
    const Eigen::Index dz = p.covariates.cols();
    bool improved_any = false;
    for (int round = 0; round < 12; ++round) {
        Eigen::VectorXd u = p.covariates * coef;
        LossAtPoint cur = loss_and_resid(p, u, clamps);
        Eigen::VectorXd grad = p.covariates.transpose() * cur.resid / static_cast<double>(p.covariates.rows());
        if (kkt_from_gradient(grad, coef, p.lambda, p.penalize_intercept) <= cfg.kkt_tol) return true;

        // active set: nonzero or subgradient-violating coordinates
        std::vector<Eigen::Index> active;
        for (Eigen::Index l = 0; l < dz; ++l) {
            const bool unpenalized = !p.penalize_intercept && l == 0;
            if (coef[l] != 0.0 || unpenalized ||
                std::fabs(grad[l]) > p.lambda + 0.5 * cfg.kkt_tol)
                active.push_back(l);
        }
        if (active.empty() || active.size() > 200) return improved_any;

        Eigen::MatrixXd h = active_hessian(p, u, active);
        h.diagonal().array() += 1e-12 * std::max(1.0, h.trace());
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(active.size()));
        for (std::size_t c = 0; c < active.size(); ++c) {
            const Eigen::Index l = active[c];
            double sub = grad[l];
            if (p.penalize_intercept || l != 0) {
                double s;
                if (coef[l] != 0.0)
                    s = coef[l] > 0.0 ? 1.0 : -1.0;
                else
                    s = grad[l] > 0.0 ? -1.0 : 1.0;  // direction the coordinate will enter
                sub += p.lambda * s;
            }
            rhs[static_cast<Eigen::Index>(c)] = -sub;
        }
        Eigen::VectorXd step = h.ldlt().solve(rhs);
        if (!step.allFinite()) return improved_any;

        // backtracking on the true penalized objective
        double t = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            Eigen::VectorXd cand = coef;
            for (std::size_t c = 0; c < active.size(); ++c)
                cand[active[c]] += t * step[static_cast<Eigen::Index>(c)];
            const double obj = loss_from_index(p, p.covariates * cand, clamps) + penalty_term(p, cand);
            if (obj <= full_obj + 1e-14 * std::max(1.0, std::fabs(full_obj))) {
                if (cand.lpNorm<1>() > cfg.divergence_cap) return improved_any;
                coef = std::move(cand);
                full_obj = obj;
                accepted = true;
                improved_any = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) return improved_any;
    }
    return improved_any;
}

SolverResult proximal_gradient(const PenalizedProblem& p, const SolverConfig& cfg,
                               const Eigen::VectorXd* warm_start) {
    const Eigen::Index n = p.covariates.rows();
    const Eigen::Index dz = p.covariates.cols();
    const double inv_n = 1.0 / static_cast<double>(n);

    SolverResult res;
    res.coef = warm_start ? *warm_start : Eigen::VectorXd::Zero(dz);

    Eigen::VectorXd u = p.covariates * res.coef;
    LossAtPoint cur = loss_and_resid(p, u, res.clamped_exponents);
    Eigen::VectorXd grad = p.covariates.transpose() * cur.resid * inv_n;
    double full_obj = cur.value + penalty_term(p, res.coef);

    double step = 1.0;
    Eigen::VectorXd cand(dz), delta(dz), u_cand(n);

    for (int phase = 0; phase < 4; ++phase) {
        bool stalled = false;
        while (res.iterations < cfg.max_iter) {
            ++res.iterations;
            res.kkt_residual = kkt_from_gradient(grad, res.coef, p.lambda, p.penalize_intercept);
            if (res.kkt_residual <= cfg.kkt_tol) break;
            if (res.coef.lpNorm<1>() > cfg.divergence_cap) {
                res.diverged = true;
                break;
            }

            // backtracking on the quadratic majorization test
            double f_cand = 0.0;
            bool accepted = false;
            for (int bt = 0; bt < 80; ++bt) {
                for (Eigen::Index l = 0; l < dz; ++l) {
                    const double t = res.coef[l] - step * grad[l];
                    cand[l] =
                        (!p.penalize_intercept && l == 0) ? t : soft_threshold(t, step * p.lambda);
                }
                delta = cand - res.coef;
                const double dn2 = delta.squaredNorm();
                if (dn2 == 0.0) {
                    // prox fixed point at this step size
                    accepted = true;
                    f_cand = cur.value;
                    u_cand = u;
                    break;
                }
                u_cand.noalias() = p.covariates * cand;
                f_cand = loss_from_index(p, u_cand, res.clamped_exponents);
                const double bound = cur.value + grad.dot(delta) + 0.5 * dn2 / step;
                if (f_cand <= bound + 1e-12 * std::max(1.0, std::fabs(bound))) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {  // step size underflow; hand over to the polish
                stalled = true;
                break;
            }

            const double new_obj = f_cand + penalty_term(p, cand);
            const double obj_change = full_obj - new_obj;

            LossAtPoint nxt = loss_and_resid(p, u_cand, res.clamped_exponents);
            Eigen::VectorXd grad_next = p.covariates.transpose() * nxt.resid * inv_n;

            // spectral (Barzilai-Borwein) step for the next iteration
            const double dg = delta.dot(grad_next - grad);
            const double dd = delta.squaredNorm();
            if (dg > 0.0 && dd > 0.0)
                step = std::clamp(dd / dg, 1e-12, 1e12);
            else
                step *= 2.0;

            res.coef.swap(cand);
            u.swap(u_cand);
            cur = std::move(nxt);
            grad.swap(grad_next);
            full_obj = new_obj;
            if (cfg.objective_trace) cfg.objective_trace->push_back(full_obj);

            if (std::fabs(obj_change) <= cfg.rel_obj_tol * std::max(1.0, std::fabs(full_obj))) {
                stalled = true;
                break;
            }
        }

        if (res.diverged || res.kkt_residual <= cfg.kkt_tol || res.iterations >= cfg.max_iter)
            break;
        if (!stalled) break;
        const bool improved = newton_polish(p, cfg, res.coef, full_obj, res.clamped_exponents);
        if (cfg.objective_trace && improved) cfg.objective_trace->push_back(full_obj);
        u = p.covariates * res.coef;
        cur = loss_and_resid(p, u, res.clamped_exponents);
        grad = p.covariates.transpose() * cur.resid * inv_n;
        res.kkt_residual = kkt_from_gradient(grad, res.coef, p.lambda, p.penalize_intercept);
        if (res.kkt_residual <= cfg.kkt_tol || !improved) break;
    }

    res.objective = smooth_loss(p, res.coef) + penalty_term(p, res.coef);
    res.kkt_residual = kkt_from_gradient(
        smooth_gradient(p, res.coef), res.coef, p.lambda, p.penalize_intercept);
    res.converged = !res.diverged && res.kkt_residual <= cfg.kkt_tol;
    return res;
}

SolverResult coordinate_descent(const PenalizedProblem& p, const SolverConfig& cfg,
                                const Eigen::VectorXd* warm_start) {
    const Eigen::Index n = p.covariates.rows();
    const Eigen::Index dz = p.covariates.cols();
    const double inv_n = 1.0 / static_cast<double>(n);

    Eigen::VectorXd ww = p.weights.cwiseProduct(p.exp_weights);
    if (ww.maxCoeff() <= 0.0)
        throw_compute("weighted_squares: all effective weights are zero");

    SolverResult res;
    res.coef = warm_start ? *warm_start : Eigen::VectorXd::Zero(dz);

    // curvature a_l = E_n[w v Z_l^2]
    Eigen::VectorXd a(dz);
    for (Eigen::Index l = 0; l < dz; ++l)
        a[l] = p.covariates.col(l).array().square().matrix().dot(ww) * inv_n;
    // columns dead on the weighted support: the optimum there is zero
    for (Eigen::Index l = 0; l < dz; ++l)
        if (a[l] <= 0.0) res.coef[l] = 0.0;

    Eigen::VectorXd r = p.outcome - p.covariates * res.coef;
    auto objective = [&]() {
        return 0.5 * inv_n * r.array().square().matrix().dot(ww) + penalty_term(p, res.coef);
    };
    double full_obj = objective();

    for (int phase = 0; phase < 4; ++phase) {
        bool stalled = false;
        while (res.iterations < cfg.max_iter) {
            ++res.iterations;
            for (Eigen::Index l = 0; l < dz; ++l) {
                if (a[l] <= 0.0) continue;  // column dead on the weighted support
                const double c =
                    p.covariates.col(l).cwiseProduct(ww).dot(r) * inv_n + a[l] * res.coef[l];
                const double updated = (!p.penalize_intercept && l == 0)
                                           ? c / a[l]
                                           : soft_threshold(c, p.lambda) / a[l];
                const double change = updated - res.coef[l];
                if (change != 0.0) {
                    r -= change * p.covariates.col(l);
                    res.coef[l] = updated;
                }
            }

            if (res.iterations % 32 == 31) r = p.outcome - p.covariates * res.coef;  // kill drift

            Eigen::VectorXd grad = -(p.covariates.transpose() * ww.cwiseProduct(r)) * inv_n;
            res.kkt_residual = kkt_from_gradient(grad, res.coef, p.lambda, p.penalize_intercept);
            const double new_obj = objective();
            if (cfg.objective_trace) cfg.objective_trace->push_back(new_obj);
            if (res.kkt_residual <= cfg.kkt_tol) break;
            if (res.coef.lpNorm<1>() > cfg.divergence_cap) {
                res.diverged = true;
                break;
            }
            const double change = full_obj - new_obj;
            full_obj = new_obj;
            if (std::fabs(change) <= cfg.rel_obj_tol * std::max(1.0, std::fabs(new_obj))) {
                stalled = true;
                break;
            }
        }

        if (res.diverged || res.kkt_residual <= cfg.kkt_tol || res.iterations >= cfg.max_iter)
            break;
        if (!stalled) break;
        const bool improved = newton_polish(p, cfg, res.coef, full_obj, res.clamped_exponents);
        if (cfg.objective_trace && improved) cfg.objective_trace->push_back(full_obj);
        r = p.outcome - p.covariates * res.coef;
        const Eigen::VectorXd grad = -(p.covariates.transpose() * ww.cwiseProduct(r)) * inv_n;
        res.kkt_residual = kkt_from_gradient(grad, res.coef, p.lambda, p.penalize_intercept);
        if (res.kkt_residual <= cfg.kkt_tol || !improved) break;
    }

    r = p.outcome - p.covariates * res.coef;
    res.objective = objective();
    res.kkt_residual = kkt_residual(p, res.coef);
    res.converged = !res.diverged && res.kkt_residual <= cfg.kkt_tol;
    return res;
}

}  // namespace

void PenalizedProblem::validate() const {
    const Eigen::Index n = covariates.rows();
    if (n < 1 || covariates.cols() < 1) throw_usage("penalized problem: empty design");
    if (weights.size() != n) throw_usage("penalized problem: weight length mismatch");
    if (weights.minCoeff() < 0.0) throw_usage("penalized problem: weights must be nonnegative");
    if (lambda < 0.0) throw_usage("penalized problem: lambda must be nonnegative");
    if (loss == LossKind::weighted_squares) {
        if (outcome.size() != n || exp_weights.size() != n)
            throw_usage("weighted_squares: outcome/exp_weights length mismatch");
        if (exp_weights.minCoeff() < 0.0)
            throw_usage("weighted_squares: exp_weights must be nonnegative");
    } else {
        if (treatment.size() != n) throw_usage("penalized problem: treatment length mismatch");
        for (Eigen::Index i = 0; i < n; ++i)
            if (treatment[i] != 0.0 && treatment[i] != 1.0)
                throw_usage("penalized problem: treatment must be binary");
    }
}

double smooth_loss(const PenalizedProblem& p, const Eigen::VectorXd& coef) {
    long clamps = 0;
    return loss_from_index(p, p.covariates * coef, clamps);
}

double objective_value(const PenalizedProblem& p, const Eigen::VectorXd& coef) {
    return smooth_loss(p, coef) + penalty_term(p, coef);
}

Eigen::VectorXd smooth_gradient(const PenalizedProblem& p, const Eigen::VectorXd& coef) {
    long clamps = 0;
    LossAtPoint at = loss_and_resid(p, p.covariates * coef, clamps);
    return p.covariates.transpose() * at.resid / static_cast<double>(p.covariates.rows());
}

double kkt_residual(const PenalizedProblem& p, const Eigen::VectorXd& coef) {
    return kkt_from_gradient(smooth_gradient(p, coef), coef, p.lambda, p.penalize_intercept);
}

SolverResult fit_penalized(const PenalizedProblem& p, const SolverConfig& cfg,
                           const Eigen::VectorXd* warm_start) {
    p.validate();
    if (warm_start && warm_start->size() != p.covariates.cols())
        throw_usage("warm start dimension mismatch");
    return p.loss == LossKind::weighted_squares ? coordinate_descent(p, cfg, warm_start)
                                                : proximal_gradient(p, cfg, warm_start);
}

namespace {

PenalizedProblem make_logistic_problem(LossKind loss, const Eigen::VectorXd& w,
                                       const Eigen::VectorXd& d, const Eigen::MatrixXd& z,
                                       double lambda, const SolverConfig& cfg) {
    PenalizedProblem p;
    p.loss = loss;
    p.weights = w;
    p.treatment = d;
    p.covariates = z;
    p.lambda = lambda;
    p.penalize_intercept = cfg.penalize_intercept;
    return p;
}

}  // namespace

SolverResult fit_calibrated_logistic_treated(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                                             const Eigen::MatrixXd& z, double lambda,
                                             const SolverConfig& cfg,
                                             const Eigen::VectorXd* warm_start) {
    return fit_penalized(
        make_logistic_problem(LossKind::calibrated_logistic_treated, w, d, z, lambda, cfg), cfg,
        warm_start);
}

SolverResult fit_calibrated_logistic_control(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                                             const Eigen::MatrixXd& z, double lambda,
                                             const SolverConfig& cfg,
                                             const Eigen::VectorXd* warm_start) {
    return fit_penalized(
        make_logistic_problem(LossKind::calibrated_logistic_control, w, d, z, lambda, cfg), cfg,
        warm_start);
}

SolverResult fit_logistic_mle(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                              const Eigen::MatrixXd& z, double lambda, const SolverConfig& cfg,
                              const Eigen::VectorXd* warm_start) {
    return fit_penalized(make_logistic_problem(LossKind::logistic_mle, w, d, z, lambda, cfg), cfg,
                         warm_start);
}

SolverResult fit_weighted_lasso(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda,
                                const SolverConfig& cfg, const Eigen::VectorXd* warm_start) {
    PenalizedProblem p;
    p.loss = LossKind::weighted_squares;
    p.weights = w;
    p.exp_weights = v;
    p.covariates = z;
    p.outcome = y;
    p.lambda = lambda;
    p.penalize_intercept = cfg.penalize_intercept;
    return fit_penalized(p, cfg, warm_start);
}

void require_converged(const SolverResult& result, const std::string& context) {
    if (result.converged) return;
    if (result.diverged)
        throw_compute(context + ": objective unbounded for this penalty (|coef|_1 "
                                "exceeded the divergence cap); increase lambda");
    throw_compute(context + ": solver did not converge (kkt residual " +
                  std::to_string(result.kkt_residual) + " after " +
                  std::to_string(result.iterations) + " iterations)");
}

double bregman_gamma(const Eigen::VectorXd& w, const Eigen::VectorXd& d, const Eigen::MatrixXd& z,
                     const Eigen::VectorXd& coef_a, const Eigen::VectorXd& coef_b) {
    const Eigen::VectorXd ua = z * coef_a;
    const Eigen::VectorXd ub = z * coef_b;
    long clamps = 0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        acc += w[i] * d[i] * (clamped_exp(-ua[i], clamps) - clamped_exp(-ub[i], clamps)) *
               (ub[i] - ua[i]);
    return acc / static_cast<double>(z.rows());
}

double bregman_alpha(const Eigen::VectorXd& w, const Eigen::VectorXd& v, const Eigen::MatrixXd& z,
                     const Eigen::VectorXd& coef_a, const Eigen::VectorXd& coef_b) {
    const Eigen::VectorXd diff = z * (coef_b - coef_a);
    return w.cwiseProduct(v).dot(diff.cwiseAbs2()) / static_cast<double>(z.rows());
}

}  // namespace madml
