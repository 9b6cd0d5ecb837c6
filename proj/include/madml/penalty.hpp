#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "madml/basis.hpp"
#include "madml/dataset.hpp"
#include "madml/rng.hpp"
#include "madml/solver.hpp"

namespace madml {

enum class Arm { treated, control };

enum class PenaltyMethod { bootstrap, cv_only };

struct PenaltyConfig {
    double c0 = 1.1;
    double eps = 0.05;       // bootstrap quantile tail
    int n_boot = 10000;      // multiplier bootstrap draws B
    std::vector<double> pilot_candidates;  // empty: data-driven defaults
    int cv_folds = 5;
    double ratio_divisor = 5.0;
    PenaltyMethod method = PenaltyMethod::bootstrap;
    std::uint64_t seed = 0;
    // optional per-term overrides for c0 (length k when used)
    std::vector<double> c0_gamma;
    std::vector<double> c0_alpha;

    void validate() const;
};

// lambda_pilot = c * sqrt(ln^3(d_z) / n)
double pilot_penalty(double c, double dz, double n);

// max(lambda_gamma / divisor, lambda_alpha); keeps the penalty ratio
// bounded as required by the first-stage convergence lemma.
double enforce_ratio(double lambda_gamma, double lambda_alpha, double divisor);

// Default pilot-constant candidates: 5 log-spaced values scaled by the
// largest first-stage weight observed in the sample.
std::vector<double> default_pilot_candidates(const BasisMatrix& basis);

// Candidate interval endpoints for the CV-only method, from the
// recommended data-driven formulas; `count` evenly spaced values.
std::vector<double> cv_candidate_grid(const BasisMatrix& basis, const Eigen::MatrixXd& z,
                                      int count = 10);

struct ConstantPair {
    double c_gamma = 0.0;
    double c_alpha = 0.0;
};

// K-fold selection of the pilot constants for basis term j: fit on K-1
// folds at the candidate's pilot penalty, score with the unpenalized loss
// on the held-out fold, pick the argmin (gamma and alpha independently,
// ties toward the larger constant).
ConstantPair cv_select_constants(const Dataset& ds, const BasisMatrix& basis, Eigen::Index j,
                                 const std::vector<double>& candidates, int folds, Arm arm,
                                 const SolverConfig& scfg, std::uint64_t seed);

// Plug-in residual estimates from the pilot fits:
//   U_gamma = -w (D e^{-g'Z} + (1-D)),  U_alpha = w D e^{-g'Z} (Y - a'Z)
// (control arm: D <-> 1-D and e^{-g'Z} <-> e^{g'Z}).
std::pair<Eigen::VectorXd, Eigen::VectorXd> estimate_residuals(
    const Dataset& ds, const Eigen::VectorXd& w, const Eigen::VectorXd& gamma,
    const Eigen::VectorXd& alpha, Arm arm);

// c0 x the ceil((1-eps)B)-th order statistic of
//   T_b = max_l |E_n[e_i U_i Z_il]|,  e ~ N(0, I_n) from rng.
double bootstrap_penalty(const Eigen::VectorXd& u, const Eigen::MatrixXd& z,
                         const PenaltyConfig& cfg, Rng& rng, double c0_override = -1.0);

struct PenaltySelection {
    double lambda_gamma = 0.0;
    double lambda_alpha = 0.0;
    ConstantPair constants;
    Eigen::VectorXd pilot_gamma;  // warm starts for the final fits
    Eigen::VectorXd pilot_alpha;
};

// Full per-term selection pipeline (bootstrap or cv_only method).
std::vector<PenaltySelection> select_penalties(const Dataset& ds, const BasisMatrix& basis,
                                               const PenaltyConfig& pcfg, const SolverConfig& scfg,
                                               Arm arm, std::uint64_t master_seed, int threads);

// Deterministic stratified K-fold assignment (both arms present in every
// fold); fold_of[i] in [0, K).
std::vector<int> stratified_folds(const Eigen::VectorXd& d, int folds, std::uint64_t seed);

}  // namespace madml
