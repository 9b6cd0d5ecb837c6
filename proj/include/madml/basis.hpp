#pragma once

#include <Eigen/Dense>
#include <vector>

namespace madml {

enum class BasisKind { local_constant, bspline };

// Weakly positive univariate basis over the support of the conditioning
// variable. knots are the distinct breakpoints (boundaries included);
// B-splines are clamped, i.e. boundary knots are implicitly replicated
// degree+1 times, so the column count is (#knots - 1) + degree for
// B-splines and #knots - 1 for local constants.
struct BasisSpec {
    BasisKind kind = BasisKind::bspline;
    int degree = 2;
    Eigen::VectorXd knots;  // strictly increasing, length >= 2
    int knot_count = 2;     // evenly spaced over the data when knots is empty
    bool normalize = true;  // divide each column by its empirical L2 norm
    double affine_shift = 0.0;  // c_k added to first-stage weights only

    Eigen::Index column_count() const;
    void validate() const;
};

// Evenly spaced boundary-to-boundary knot vector.
Eigen::VectorXd uniform_knots(double lo, double hi, int knot_count);

// Indicator basis 1_{[l_{j-1}, l_j)}(x); the last cell is closed on the
// right so every point of the support lands in exactly one cell.
Eigen::VectorXd local_constant_basis(double x, const Eigen::VectorXd& knots);

// Clamped B-spline values of the given degree via the Cox-de Boor
// recursion; nonnegative and summing to one over the closed support.
Eigen::VectorXd bspline_basis(double x, const Eigen::VectorXd& knots, int degree);

struct BasisMatrix {
    BasisSpec spec;
    Eigen::MatrixXd values;       // n x k, post-normalization
    Eigen::VectorXd column_norms; // sqrt(mean of squares) before normalization
    double xi_inf = 0.0;          // max_i max_j |P_ij|
    double xi_2 = 0.0;            // max_i ||row_i||_2

    Eigen::Index n() const { return values.rows(); }
    Eigen::Index k() const { return values.cols(); }

    // Basis vector at an arbitrary point, on the same scale as values
    // (sample column norms applied). The affine shift is NOT applied.
    Eigen::VectorXd at(double x) const;

    // Weight vector handed to the first-stage estimating equations for
    // term j: p_j + affine_shift.
    Eigen::VectorXd first_stage_weight(Eigen::Index j) const;
};

BasisMatrix evaluate_basis(const BasisSpec& spec, const Eigen::VectorXd& x_values);

// Empirical design matrix (1/n) sum_i p(X_i) p(X_i)'. Errors out when the
// smallest eigenvalue falls below eig_floor.
Eigen::MatrixXd design_matrix(const BasisMatrix& basis, double eig_floor = 1e-8,
                              double* min_eigenvalue = nullptr);

}  // namespace madml
