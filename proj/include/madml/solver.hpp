#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace madml {

// First-stage losses. The calibrated losses are the non-likelihood convex
// objectives whose first-order conditions zero the aIPW gradient at the
// limiting nuisance values; weighted_squares is the exp-weighted outcome
// regression. logistic_mle is the standard penalized MLE used by the
// benchmark estimator, not by the model-assisted first stage.
enum class LossKind {
    calibrated_logistic_treated,
    calibrated_logistic_control,
    weighted_squares,
    logistic_mle,
};

struct SolverConfig {
    double kkt_tol = 1e-7;
    double rel_obj_tol = 1e-10;
    long max_iter = 100000;
    double divergence_cap = 1000.0;  // l1 ball; calibrated losses can be unbounded
    bool penalize_intercept = true;  // column 0 exempt when false
    // when set, the penalized objective is appended after every accepted step
    std::vector<double>* objective_trace = nullptr;
};

struct SolverResult {
    Eigen::VectorXd coef;
    double objective = 0.0;
    double kkt_residual = 0.0;
    long iterations = 0;
    bool converged = false;
    bool diverged = false;
    long clamped_exponents = 0;  // overflow-guard activations, see solver.cpp
};

struct PenalizedProblem {
    LossKind loss = LossKind::calibrated_logistic_treated;
    Eigen::VectorXd weights;      // w = p_j(X), nonnegative
    Eigen::MatrixXd covariates;   // Z, n x d_z
    Eigen::VectorXd treatment;    // D (calibrated / mle losses)
    Eigen::VectorXd outcome;      // Y (weighted_squares)
    Eigen::VectorXd exp_weights;  // v_i = D_i exp(-gamma'Z_i) (weighted_squares)
    double lambda = 0.0;
    bool penalize_intercept = true;

    void validate() const;
};

// Smooth part of the objective (no penalty).
double smooth_loss(const PenalizedProblem& p, const Eigen::VectorXd& coef);
// Smooth loss plus lambda * l1 penalty.
double objective_value(const PenalizedProblem& p, const Eigen::VectorXd& coef);
// Gradient of the smooth part.
Eigen::VectorXd smooth_gradient(const PenalizedProblem& p, const Eigen::VectorXd& coef);

// Distance from the l1 subdifferential optimality conditions:
// zero coordinates contribute max(|g_l| - lambda, 0), active coordinates
// |g_l + lambda sign(coef_l)|.
double kkt_residual(const PenalizedProblem& p, const Eigen::VectorXd& coef);

SolverResult fit_penalized(const PenalizedProblem& p, const SolverConfig& cfg,
                           const Eigen::VectorXd* warm_start = nullptr);

// min E_n[w {D e^{-g'Z} + (1-D) g'Z}] + lambda ||g||_1
SolverResult fit_calibrated_logistic_treated(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                                             const Eigen::MatrixXd& z, double lambda,
                                             const SolverConfig& cfg = {},
                                             const Eigen::VectorXd* warm_start = nullptr);

// min E_n[w {(1-D) e^{g'Z} - D g'Z}] + lambda ||g||_1
SolverResult fit_calibrated_logistic_control(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                                             const Eigen::MatrixXd& z, double lambda,
                                             const SolverConfig& cfg = {},
                                             const Eigen::VectorXd* warm_start = nullptr);

// min E_n[w v (Y - a'Z)^2]/2 + lambda ||a||_1, cyclic coordinate descent
SolverResult fit_weighted_lasso(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda,
                                const SolverConfig& cfg = {},
                                const Eigen::VectorXd* warm_start = nullptr);

// min E_n[w {log(1 + e^{g'Z}) - D g'Z}] + lambda ||g||_1 (benchmark)
SolverResult fit_logistic_mle(const Eigen::VectorXd& w, const Eigen::VectorXd& d,
                              const Eigen::MatrixXd& z, double lambda,
                              const SolverConfig& cfg = {},
                              const Eigen::VectorXd* warm_start = nullptr);

// Throws a compute error carrying diagnostics unless result.converged.
void require_converged(const SolverResult& result, const std::string& context);

// Symmetrized Bregman divergences, nonnegative by convexity.
// D_gamma = E_n[w D (e^{-a'Z} - e^{-b'Z})(b'Z - a'Z)]
double bregman_gamma(const Eigen::VectorXd& w, const Eigen::VectorXd& d, const Eigen::MatrixXd& z,
                     const Eigen::VectorXd& coef_a, const Eigen::VectorXd& coef_b);
// D_alpha = E_n[w v (b'Z - a'Z)^2]
double bregman_alpha(const Eigen::VectorXd& w, const Eigen::VectorXd& v, const Eigen::MatrixXd& z,
                     const Eigen::VectorXd& coef_a, const Eigen::VectorXd& coef_b);

}  // namespace madml
