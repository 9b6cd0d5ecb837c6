#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace madml {

// Column-role mapping for CSV ingestion. The conditioning variable is
// included among the controls by default (Z = (Z1, X)); interaction and
// higher-order columns are the caller's responsibility and arrive as
// ordinary control columns.
struct ColumnSchema {
    std::string outcome;
    std::string treatment;
    std::string conditioning;
    std::vector<std::string> controls;
    bool include_conditioning_in_controls = true;
    char delimiter = ',';
};

// Per-column affine map recorded by normalize_unit_interval so the
// original scale can be recovered.
struct ColumnScale {
    double offset = 0.0;  // original value = offset + scale * stored value
    double scale = 1.0;
};

// Canonical immutable data representation. z always carries the intercept
// as column 0 (exactly 1, exempt from normalization).
struct Dataset {
    Eigen::VectorXd y;
    Eigen::VectorXd d;
    Eigen::VectorXd x;
    Eigen::MatrixXd z;
    std::vector<std::string> z_names;  // z_names[0] == "(intercept)"
    std::string y_name = "y";
    std::string d_name = "d";
    std::string x_name = "x";
    bool normalized = false;
    std::vector<ColumnScale> z_scales;  // populated when normalized

    Eigen::Index n() const { return y.size(); }
    Eigen::Index dz() const { return z.cols(); }
    std::size_t treated_count() const;
    std::size_t control_count() const;

    // Enforces the domain invariants (binary treatment, both arms
    // nonempty, n >= 2, consistent dimensions, finite values).
    void validate() const;
};

struct PreprocessConfig {
    bool normalize = true;
    double trim_lower_q = 0.0;
    double trim_upper_q = 0.0;
    std::vector<std::string> trim_group_cols;  // empty: single pooled group
    int min_group_rows = 10;
    double propensity_clip_lo = 0.01;
    double propensity_clip_hi = 0.99;
    double outcome_clip_frac = 0.125;

    void validate() const;
};

Dataset load_csv(const std::string& path, const ColumnSchema& schema);

// Maps every non-intercept control column onto [0,1] (min -> 0, max -> 1).
// Degenerate constant columns become identically zero rather than NaN.
// Idempotent; records the affine maps in z_scales.
Dataset normalize_unit_interval(const Dataset& ds);

struct TrimResult {
    Dataset data;
    std::size_t rows_removed = 0;
    std::size_t groups_removed = 0;
};

// Within each group defined by cfg.trim_group_cols, removes the
// ceil(q_lo * m) lowest and ceil(q_hi * m) highest outcomes (ranks, ties
// broken by row order). Groups with fewer than cfg.min_group_rows rows are
// dropped entirely.
TrimResult trim_quantiles(const Dataset& ds, const PreprocessConfig& cfg);

// Audit snapshot; full double precision so load -> write -> load round-trips.
void write_csv(const Dataset& ds, const std::string& path);

}  // namespace madml
