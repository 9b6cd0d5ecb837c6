#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "madml/dataset.hpp"
#include "madml/estimator.hpp"
#include "madml/rng.hpp"

namespace madml {

enum class Dgp { S1, S2, S3 };

std::string dgp_name(Dgp dgp);

// Simulation design: X ~ U(1,2); Toeplitz Gaussian controls; logistic
// treatment; Y = D (1 + X + 0.5 X^2 + gamma'W) + eps. The estimator-facing
// control matrix is [1, X, X^2, Z1], so d_z counts those columns too and
// the Toeplitz block has d_z - 3 columns.
struct DgpConfig {
    Dgp dgp = Dgp::S1;
    int n = 500;
    int d_z = 100;
    int sparsity = -1;          // -1: regime default (S1: 6, S2: 4, S3: 5)
    double intercept = std::numeric_limits<double>::quiet_NaN();  // NaN: calibrate
    Eigen::VectorXd gamma_coefs;  // empty: 1/sqrt(sparsity) on the first coords
    double gamma_scale = 1.0;     // multiplies the default coefficients
    std::uint64_t seed = 0;
    double target_treated_frac = 0.5;

    int effective_sparsity() const;
    Eigen::VectorXd effective_gamma() const;  // length d_z - 3
    void validate() const;
};

// Rows i.i.d. centered Gaussian, Cov(col j, col k) = 2^{-|j-k|}.
Eigen::MatrixXd toeplitz_gaussian(Eigen::Index n, Eigen::Index d, Rng& rng);

// z -> z + max(0, 1 + z)^2, elementwise.
Eigen::MatrixXd transform_dagger(const Eigen::MatrixXd& z);

// Intercept p such that the mean treatment probability over a large Monte
// Carlo draw hits target_treated_frac; bisection on the seeded draw.
double calibrate_intercept(const DgpConfig& cfg, std::uint64_t seed, int mc_rows = 100000);

// E[max(0, 1+Z)^2] for Z ~ N(0,1); the S2 ground-truth shift per active
// coefficient is gamma_j times this constant.
double dagger_shift_constant();

struct SimDraw {
    Dataset data;
    double g0_shift = 0.0;       // g0(x) = 1 + x + 0.5 x^2 + g0_shift
    double intercept_used = 0.0;
    Eigen::VectorXd y1;          // treated potential outcome, every row
    Eigen::VectorXd pi_true;     // true propensity, every row
};

double g0_value(double x, double shift);

SimDraw generate(const DgpConfig& cfg);

// One estimator's output for one replication.
struct RepOutcome {
    bool ok = false;
    std::string error;
    Eigen::VectorXd ghat;  // over the common grid
    double pw_lo90 = 0, pw_hi90 = 0, pw_lo95 = 0, pw_hi95 = 0;  // at eval_x
    Eigen::VectorXd unif_lo90, unif_hi90, unif_lo95, unif_hi95;
    // first-stage diagnostics (empty for estimators without them)
    long pi_clip_events = 0;
    long m_clip_events = 0;
    int foc_checked = 0;      // fits with no propensity clipping
    int foc_violations = 0;   // among those, FOC gap above lambda + 1e-6
    double foc_worst_gap = 0.0;  // max over checked fits of (gap - lambda)
};

using EstimatorFn = std::function<RepOutcome(const Dataset& ds, const SimDraw& truth,
                                             const Eigen::VectorXd& grid, double eval_x,
                                             std::uint64_t fit_seed)>;

struct EstimatorAdapter {
    std::string name;
    EstimatorFn run;
};

// Production adapters. The model-assisted estimator runs the full
// penalty-selection + per-term first-stage pipeline; the benchmark uses a
// single l1-penalized MLE logistic fit and a single l1-penalized least
// squares fit shared across all basis terms.
EstimatorAdapter make_madml_adapter(const FitConfig& cfg);
EstimatorAdapter make_dml_adapter(const FitConfig& cfg);

struct McConfig {
    int reps = 200;
    int grid_size = 100;
    double eval_x = 1.5;
    std::uint64_t seed = 0;
    int threads = 1;
    double invalid_failure_frac = 0.05;
};

struct ReportRow {
    std::string dgp;
    std::string estimator;
    int n = 0;
    int d_z = 0;
    double ibias2 = 0, ivar = 0, imse = 0;
    double cov90 = 0, cov95 = 0, ucov90 = 0, ucov95 = 0;
    int reps_completed = 0;
    int failures = 0;
    bool valid = true;
    // aggregated first-stage diagnostics
    long pi_clip_events = 0;
    long m_clip_events = 0;
    int foc_checked = 0;
    int foc_violations = 0;
    double foc_worst_gap = 0.0;
    double wall_seconds = 0.0;  // console diagnostics only, never serialized
};

struct RepDiagnostics {
    int rep = 0;
    std::string estimator;
    bool ok = false;
    std::string error;
    bool cov90 = false, cov95 = false, ucov90 = false, ucov95 = false;
    long pi_clip_events = 0;
    long m_clip_events = 0;
    int foc_violations = 0;
};

struct SimulationReport {
    std::vector<ReportRow> rows;
    Eigen::VectorXd grid;
    double eval_x = 1.5;
    std::vector<RepDiagnostics> per_rep;
};

// Trapezoid rule over the (sorted, uniform or not) grid.
double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values);

SimulationReport run_monte_carlo(const DgpConfig& dgp, const std::vector<EstimatorAdapter>& fits,
                                 const McConfig& mc);

}  // namespace madml
