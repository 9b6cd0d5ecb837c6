#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "madml/basis.hpp"
#include "madml/dataset.hpp"
#include "madml/penalty.hpp"
#include "madml/solver.hpp"

namespace madml {

// aIPW pseudo-outcome for the treated-arm counterfactual mean:
//   d y / pi - (d / pi - 1) m
double aipw_treated(double y, double d, double pi, double m);

// Control-arm analog. The second term enters with a minus sign; that is
// the version under which both double-robustness identities hold (exact
// enumeration check lives in the test suite).
//   (1-d) y / (1-pi) - ((1-d) / (1-pi) - 1) m
double aipw_control(double y, double d, double pi, double m);

struct ClipConfig {
    double pi_lo = 0.01;
    double pi_hi = 0.99;
    double outcome_frac = 0.125;  // m clipped to observed range +/- frac*range
};

struct NuisanceFit {
    Eigen::VectorXd gamma;
    Eigen::VectorXd alpha;
    double lambda_gamma = 0.0;
    double lambda_alpha = 0.0;
    double c_gamma = 0.0;
    double c_alpha = 0.0;
    SolverResult gamma_diag;
    SolverResult alpha_diag;
    double bregman_gamma_vs_pilot = 0.0;
    double bregman_alpha_vs_pilot = 0.0;
    // first-order-condition gap of the fitted gamma program at the aIPW
    // gradient: ||E_n[w_j (1 - D/pi_j) Z]||_inf (arm-mirrored for control)
    double foc_sup_norm = 0.0;
    long pi_clips = 0;
    long m_clips = 0;
};

struct NuisanceSet {
    Arm arm = Arm::treated;
    std::vector<NuisanceFit> fits;  // one per basis term
};

struct SignalMatrix {
    Eigen::MatrixXd values;  // n x k, column j = Y(pi_j, m_j)
    long pi_clip_events = 0;
    long m_clip_events = 0;
    long clip_events() const { return pi_clip_events + m_clip_events; }
};

// Per-term first-stage fits at the selected penalties plus the aIPW
// signal matrix. Throws (with per-term diagnostics) if any fit diverges
// or fails to converge.
struct FirstStage {
    NuisanceSet nuisances;
    SignalMatrix signals;
};
FirstStage fit_first_stage(const Dataset& ds, const BasisMatrix& basis,
                           const std::vector<PenaltySelection>& penalties, Arm arm,
                           const SolverConfig& scfg, const ClipConfig& clip, int threads);

// beta_k = Qhat^{-1} [ E_n p_j(X) S_ij ]_j. When the basis carries an
// affine first-stage shift c, the moment vector is corrected to
// E_n[(p_j + c) S_j] - c E_n[S_1].
Eigen::VectorXd second_stage_beta(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                                  const Eigen::MatrixXd& signals);

// Omega = Qhat^{-1} E_n[(p o eps)(p o eps)'] Qhat^{-1},
// eps_ij = S_ij - p(X_i)' beta.
Eigen::MatrixXd omega_hat(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                          const Eigen::MatrixXd& signals, const Eigen::VectorXd& beta);

// CATE variance matrix from both arms' residuals; equals
// Omega0 + Omega1 - 2*Omega2 and is PSD by construction.
Eigen::MatrixXd combined_omega(const BasisMatrix& basis, const Eigen::MatrixXd& qhat,
                               const Eigen::MatrixXd& signals_treated,
                               const Eigen::MatrixXd& signals_control,
                               const Eigen::VectorXd& beta_treated,
                               const Eigen::VectorXd& beta_control);

// sigma(x) = sqrt(p(x)' Omega p(x) / n); tiny negative quadratic forms
// (>= -1e-10 relative) are clamped to zero.
double sigma_hat(const Eigen::VectorXd& p_at_x, const Eigen::MatrixXd& omega, Eigen::Index n);

struct Band {
    double lo = 0.0;
    double hi = 0.0;
};
Band pointwise_band(double ghat, double sigma, double eta);

// Symmetric PSD square root; eigenvalues in [-1e-8, 0) relative are
// clamped to zero, anything lower is an error.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& omega);

struct UniformCrit {
    double value = 0.0;               // order statistic at 1 - eta/2
    std::vector<double> sup_draws;    // sorted bootstrap sup statistics
    double at(double eta) const;      // critical value for another level
};

// Gaussian multiplier bootstrap of sup_x |p(x)' Omega^{1/2} N| / ||Omega^{1/2} p(x)||
// over the grid; the 1/sqrt(n) scale common to numerator and denominator cancels.
UniformCrit uniform_critical_value(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& grid_basis,
                                   double eta, int n_boot, std::uint64_t seed);

struct InferenceConfig {
    double eta = 0.05;
    int grid_size = 100;
    int n_boot = 10000;
};

struct FitConfig {
    BasisSpec basis;            // knots empty: boundary knots from the data
    SolverConfig solver;
    PenaltyConfig penalty;
    InferenceConfig inference;
    ClipConfig clip;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct ArmFit {
    NuisanceSet nuisances;
    SignalMatrix signals;
    Eigen::VectorXd beta;
    std::vector<PenaltySelection> penalties;
};

struct CateFit {
    bool is_cate = false;                  // false: single-arm counterfactual mean
    BasisMatrix basis;                     // sample basis (norms frozen)
    Eigen::VectorXd beta;                  // treated, control difference in CATE mode
    Eigen::MatrixXd omega;                 // Omega-hat (single arm) or Omega-bar
    Eigen::VectorXd grid;                  // evaluation points
    Eigen::MatrixXd grid_basis;            // grid_size x k
    Eigen::VectorXd ghat;
    Eigen::VectorXd sigma;
    Eigen::VectorXd pointwise_lo, pointwise_hi;
    double uniform_crit = 0.0;
    Eigen::VectorXd uniform_lo, uniform_hi;
    double eta = 0.05;
    UniformCrit crit_draws;                // reusable for other levels
    std::vector<ArmFit> arms;              // [treated] or [treated, control]
    Eigen::MatrixXd qhat;
    double qhat_min_eigenvalue = 0.0;
    Eigen::Index n_obs = 0;

    double ghat_at(double x) const;
    double sigma_at(double x) const;
};

// Single-arm pipeline: penalties -> first stage -> aIPW projection ->
// variance -> pointwise and uniform bands over the grid.
CateFit fit_counterfactual(const Dataset& ds, const FitConfig& cfg, Arm arm);

// Two-arm pipeline with the combined variance matrix.
CateFit fit_cate(const Dataset& ds, const FitConfig& cfg);

// Benchmark comparator: one l1-penalized MLE logistic propensity fit and
// one l1-penalized least-squares outcome fit (treated arm), shared across
// every basis term; identical second stage and inference machinery.
CateFit fit_dml_benchmark(const Dataset& ds, const FitConfig& cfg);

// Boundary-knot default when cfg.basis.knots is empty.
BasisSpec resolve_basis_spec(const BasisSpec& spec, const Eigen::VectorXd& x);

}  // namespace madml
