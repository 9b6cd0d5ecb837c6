#include "madml/basis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "madml/errors.hpp"

namespace madml {

void BasisSpec::validate() const {
    if (knots.size() < 2) throw_usage("basis needs at least 2 knots");
    for (Eigen::Index i = 1; i < knots.size(); ++i)
        if (!(knots[i] > knots[i - 1]))
            throw_usage("basis knots must be strictly increasing");
    if (degree < 0) throw_usage("basis degree must be nonnegative");
    if (kind == BasisKind::local_constant && degree != 0)
        throw_usage("local_constant basis has degree 0");
    if (affine_shift < 0.0) throw_usage("affine_shift must be nonnegative");
    if (column_count() < 1) throw_usage("basis has no columns");
}

Eigen::Index BasisSpec::column_count() const {
    const Eigen::Index cells = knots.size() - 1;
    return kind == BasisKind::local_constant ? cells : cells + degree;
}

Eigen::VectorXd uniform_knots(double lo, double hi, int knot_count) {
    if (knot_count < 2) throw_usage("need at least 2 knots");
    if (!(hi > lo)) throw_usage("knot range is empty");
    Eigen::VectorXd k(knot_count);
    for (int i = 0; i < knot_count; ++i)
        k[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(knot_count - 1);
    k[knot_count - 1] = hi;
    return k;
}

namespace {

void check_support(double x, const Eigen::VectorXd& knots) {
    if (x < knots[0] || x > knots[knots.size() - 1])
        throw_compute("x = " + std::to_string(x) + " outside basis support [" +
                      std::to_string(knots[0]) + ", " + std::to_string(knots[knots.size() - 1]) + "]");
}

}  // namespace

Eigen::VectorXd local_constant_basis(double x, const Eigen::VectorXd& knots) {
    check_support(x, knots);
    const Eigen::Index cells = knots.size() - 1;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(cells);
    for (Eigen::Index j = 0; j < cells; ++j) {
        const bool last = (j == cells - 1);
        if (x >= knots[j] && (x < knots[j + 1] || (last && x <= knots[j + 1]))) {
            out[j] = 1.0;
            break;
        }
    }
    return out;
}

Eigen::VectorXd bspline_basis(double x, const Eigen::VectorXd& knots, int degree) {
    if (knots.size() < 2) throw_usage("bspline needs at least 2 distinct knots");
    if (degree == 0) return local_constant_basis(x, knots);
    check_support(x, knots);

    // clamped knot vector: boundaries replicated degree+1 times
    const Eigen::Index t = knots.size();
    const Eigen::Index m = t + 2 * degree;  // extended knot count
    Eigen::VectorXd ext(m);
    for (int i = 0; i < degree; ++i) ext[i] = knots[0];
    ext.segment(degree, t) = knots;
    for (int i = 0; i < degree; ++i) ext[t + degree + i] = knots[t - 1];

    const Eigen::Index nb = m - degree - 1;  // (t - 1) + degree columns

    // degree-0 seed on the extended vector; zero-width cells stay zero
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m - 1);
    if (x >= ext[m - 1]) {
        // right boundary: closed last nonempty cell
        for (Eigen::Index j = m - 2; j >= 0; --j) {
            if (ext[j] < ext[j + 1]) {
                b[j] = 1.0;
                break;
            }
        }
    } else {
        for (Eigen::Index j = 0; j + 1 < m; ++j) {
            if (x >= ext[j] && x < ext[j + 1]) {
                b[j] = 1.0;
                break;
            }
        }
    }

    // Cox-de Boor: B_{j,d+1} = w_{j,d} B_{j,d} + (1 - w_{j+1,d}) B_{j+1,d}
    for (int d = 1; d <= degree; ++d) {
        for (Eigen::Index j = 0; j + d + 1 < m; ++j) {
            double v = 0.0;
            if (b[j] != 0.0 && ext[j + d] != ext[j])
                v += (x - ext[j]) / (ext[j + d] - ext[j]) * b[j];
            if (j + 1 < m - 1 && b[j + 1] != 0.0 && ext[j + d + 1] != ext[j + 1])
                v += (ext[j + d + 1] - x) / (ext[j + d + 1] - ext[j + 1]) * b[j + 1];
            b[j] = v;
        }
    }
    return b.head(nb);
}

Eigen::VectorXd BasisMatrix::at(double x) const {
    Eigen::VectorXd p = spec.kind == BasisKind::local_constant
                            ? local_constant_basis(x, spec.knots)
                            : bspline_basis(x, spec.knots, spec.degree);
    if (spec.normalize)
        for (Eigen::Index j = 0; j < p.size(); ++j)
            if (column_norms[j] > 0.0) p[j] /= column_norms[j];
    return p;
}

Eigen::VectorXd BasisMatrix::first_stage_weight(Eigen::Index j) const {
    return values.col(j).array() + spec.affine_shift;
}

BasisMatrix evaluate_basis(const BasisSpec& spec, const Eigen::VectorXd& x_values) {
    spec.validate();
    if (x_values.size() == 0) throw_usage("evaluate_basis: no points");

    BasisMatrix out;
    out.spec = spec;
    const Eigen::Index n = x_values.size();
    const Eigen::Index k = spec.column_count();
    out.values.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values.row(i) = spec.kind == BasisKind::local_constant
                                ? local_constant_basis(x_values[i], spec.knots).transpose()
                                : bspline_basis(x_values[i], spec.knots, spec.degree).transpose();
    }

    out.column_norms = (out.values.array().square().colwise().mean()).sqrt();
    if (spec.normalize) {
        for (Eigen::Index j = 0; j < k; ++j) {
            if (out.column_norms[j] <= 0.0)
                throw_compute("basis column " + std::to_string(j) +
                              " vanishes on the sample; remove unused knots");
            out.values.col(j) /= out.column_norms[j];
        }
    }
    out.xi_inf = out.values.array().abs().maxCoeff();
    out.xi_2 = out.values.rowwise().norm().maxCoeff();
    return out;
}

Eigen::MatrixXd design_matrix(const BasisMatrix& basis, double eig_floor,
                              double* min_eigenvalue) {
    const double n = static_cast<double>(basis.n());
    Eigen::MatrixXd q = basis.values.transpose() * basis.values / n;
    q = 0.5 * (q + q.transpose());  // kill round-off asymmetry
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q, Eigen::EigenvaluesOnly);
    const double min_eig = eig.eigenvalues().minCoeff();
    if (min_eigenvalue) *min_eigenvalue = min_eig;
    if (min_eig < eig_floor)
        throw_compute("design matrix is numerically singular (min eigenvalue " +
                      std::to_string(min_eig) + "); use fewer knots or a lower degree");
    return q;
}

}  // namespace madml
