#include "madml/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "madml/errors.hpp"

namespace madml {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, delim)) out.push_back(cell);
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

std::string strip(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t row, const std::string& col) {
    const std::string s = strip(raw);
    if (s.empty())
        throw_data("missing value at row " + std::to_string(row) + ", column '" + col + "'");
    const char* begin = s.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (end != begin + s.size() || errno == ERANGE || !std::isfinite(v))
        throw_data("non-numeric cell '" + s + "' at row " + std::to_string(row) +
                   ", column '" + col + "'");
    return v;
}

}  // namespace

std::size_t Dataset::treated_count() const {
    return static_cast<std::size_t>(d.sum() + 0.5);
}

std::size_t Dataset::control_count() const {
    return static_cast<std::size_t>(n()) - treated_count();
}

void Dataset::validate() const {
    const Eigen::Index m = n();
    if (m < 2) throw_data("dataset needs at least 2 rows, got " + std::to_string(m));
    if (d.size() != m || x.size() != m || z.rows() != m)
        throw_data("dataset column lengths disagree");
    if (z.cols() < 1) throw_data("dataset needs at least one control column");
    if (static_cast<Eigen::Index>(z_names.size()) != z.cols())
        throw_data("control name count does not match control matrix");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (d[i] != 0.0 && d[i] != 1.0)
            throw_data("treatment column contains non-binary value " + std::to_string(d[i]) +
                       " at row " + std::to_string(i + 1));
    }
    if (!y.allFinite() || !x.allFinite() || !z.allFinite())
        throw_data("dataset contains non-finite values");
    const std::size_t treated = treated_count();
    if (treated == 0) throw_data("no treated observations (all d = 0)");
    if (treated == static_cast<std::size_t>(m)) throw_data("no control observations (all d = 1)");
    if (normalized) {
        for (Eigen::Index j = 1; j < z.cols(); ++j) {
            if (z.col(j).minCoeff() < -1e-12 || z.col(j).maxCoeff() > 1.0 + 1e-12)
                throw_data("normalized control column '" + z_names[j] + "' escapes [0,1]");
        }
    }
}

void PreprocessConfig::validate() const {
    if (trim_lower_q < 0.0 || trim_lower_q >= 0.5 || trim_upper_q < 0.0 || trim_upper_q >= 0.5)
        throw_usage("trim quantile fractions must lie in [0, 0.5)");
    if (trim_lower_q + trim_upper_q >= 1.0) throw_usage("trim fractions must sum below 1");
    if (!(propensity_clip_lo > 0.0 && propensity_clip_lo < propensity_clip_hi &&
          propensity_clip_hi < 1.0))
        throw_usage("propensity clip interval must satisfy 0 < lo < hi < 1");
    if (outcome_clip_frac < 0.0) throw_usage("outcome_clip_frac must be nonnegative");
    if (min_group_rows < 0) throw_usage("min_group_rows must be nonnegative");
}

Dataset load_csv(const std::string& path, const ColumnSchema& schema) {
    if (schema.outcome.empty() || schema.treatment.empty() || schema.conditioning.empty())
        throw_usage("schema must name outcome, treatment and conditioning columns");
    if (schema.controls.empty() && !schema.include_conditioning_in_controls)
        throw_usage("schema must name at least one control column");

    std::ifstream in(path);
    if (!in) throw_data("cannot open data file '" + path + "'");

    std::string header;
    if (!std::getline(in, header)) throw_data("empty file '" + path + "'");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const auto names = split_line(header, schema.delimiter);

    auto find_col = [&](const std::string& want) -> std::size_t {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (strip(names[i]) == want) return i;
        throw_data("column '" + want + "' not found in '" + path + "'");
    };

    const std::size_t yi = find_col(schema.outcome);
    const std::size_t di = find_col(schema.treatment);
    const std::size_t xi = find_col(schema.conditioning);
    std::vector<std::size_t> ci;
    std::vector<std::string> control_names;
    if (schema.include_conditioning_in_controls) {
        ci.push_back(xi);
        control_names.push_back(schema.conditioning);
    }
    for (const auto& c : schema.controls) {
        ci.push_back(find_col(c));
        control_names.push_back(c);
    }

    std::vector<double> ys, ds, xs;
    std::vector<std::vector<double>> cs(ci.size());
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (strip(line).empty()) continue;
        const auto cells = split_line(line, schema.delimiter);
        if (cells.size() != names.size())
            throw_data("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(names.size()));
        ys.push_back(parse_cell(cells[yi], row, schema.outcome));
        ds.push_back(parse_cell(cells[di], row, schema.treatment));
        xs.push_back(parse_cell(cells[xi], row, schema.conditioning));
        for (std::size_t j = 0; j < ci.size(); ++j)
            cs[j].push_back(parse_cell(cells[ci[j]], row, control_names[j]));
    }
    if (ys.empty()) throw_data("no data rows in '" + path + "'");

    const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
    Dataset out;
    out.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    out.d = Eigen::Map<Eigen::VectorXd>(ds.data(), n);
    out.x = Eigen::Map<Eigen::VectorXd>(xs.data(), n);
    out.z.resize(n, static_cast<Eigen::Index>(1 + cs.size()));
    out.z.col(0).setOnes();
    out.z_names = {"(intercept)"};
    for (std::size_t j = 0; j < cs.size(); ++j) {
        out.z.col(static_cast<Eigen::Index>(j + 1)) = Eigen::Map<Eigen::VectorXd>(cs[j].data(), n);
        out.z_names.push_back(control_names[j]);
    }
    out.y_name = schema.outcome;
    out.d_name = schema.treatment;
    out.x_name = schema.conditioning;
    out.validate();
    return out;
}

Dataset normalize_unit_interval(const Dataset& ds) {
    Dataset out = ds;
    out.z_scales.assign(static_cast<std::size_t>(ds.dz()), ColumnScale{});
    for (Eigen::Index j = 1; j < ds.dz(); ++j) {
        const double lo = ds.z.col(j).minCoeff();
        const double hi = ds.z.col(j).maxCoeff();
        const double range = hi - lo;
        auto& sc = out.z_scales[static_cast<std::size_t>(j)];
        if (range <= 0.0) {
            // constant non-intercept column: map to zero, remember the level
            sc.offset = lo;
            sc.scale = 1.0;
            out.z.col(j).setZero();
        } else {
            sc.offset = lo;
            sc.scale = range;
            out.z.col(j) = (ds.z.col(j).array() - lo) / range;
        }
    }
    out.normalized = true;
    return out;
}

namespace {

// Resolves a grouping column name against the dataset roles.
Eigen::VectorXd group_column(const Dataset& ds, const std::string& name) {
    if (name == ds.d_name || name == "treatment") return ds.d;
    if (name == ds.x_name || name == "conditioning") return ds.x;
    for (std::size_t j = 0; j < ds.z_names.size(); ++j)
        if (ds.z_names[j] == name) return ds.z.col(static_cast<Eigen::Index>(j));
    throw_usage("trim group column '" + name + "' is not a dataset column");
}

Dataset take_rows(const Dataset& ds, const std::vector<Eigen::Index>& rows) {
    Dataset out = ds;
    const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
    out.y.resize(m);
    out.d.resize(m);
    out.x.resize(m);
    out.z.resize(m, ds.dz());
    for (Eigen::Index r = 0; r < m; ++r) {
        out.y[r] = ds.y[rows[static_cast<std::size_t>(r)]];
        out.d[r] = ds.d[rows[static_cast<std::size_t>(r)]];
        out.x[r] = ds.x[rows[static_cast<std::size_t>(r)]];
        out.z.row(r) = ds.z.row(rows[static_cast<std::size_t>(r)]);
    }
    return out;
}

}  // namespace

TrimResult trim_quantiles(const Dataset& ds, const PreprocessConfig& cfg) {
    cfg.validate();
    TrimResult res;
    if (cfg.trim_lower_q == 0.0 && cfg.trim_upper_q == 0.0 && cfg.trim_group_cols.empty()) {
        res.data = ds;
        return res;
    }

    std::vector<Eigen::VectorXd> keys;
    for (const auto& name : cfg.trim_group_cols) keys.push_back(group_column(ds, name));

    std::map<std::vector<double>, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        std::vector<double> key(keys.size());
        for (std::size_t g = 0; g < keys.size(); ++g) key[g] = keys[g][i];
        groups[key].push_back(i);
    }

    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(ds.n()));
    for (auto& [key, rows] : groups) {
        const std::size_t m = rows.size();
        if (static_cast<int>(m) < cfg.min_group_rows) {
            ++res.groups_removed;
            continue;
        }
        const auto drop_lo = static_cast<std::size_t>(std::ceil(cfg.trim_lower_q * static_cast<double>(m)));
        const auto drop_hi = static_cast<std::size_t>(std::ceil(cfg.trim_upper_q * static_cast<double>(m)));
        if (drop_lo + drop_hi >= m) {
            ++res.groups_removed;
            continue;
        }
        // rank by outcome, ties broken by row order for determinism
        std::vector<Eigen::Index> order = rows;
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return ds.y[a] < ds.y[b]; });
        for (std::size_t r = drop_lo; r < m - drop_hi; ++r) keep.push_back(order[r]);
    }
    if (keep.empty()) throw_data("trimming removed every observation");
    std::sort(keep.begin(), keep.end());
    res.rows_removed = static_cast<std::size_t>(ds.n()) - keep.size();
    res.data = take_rows(ds, keep);
    res.data.validate();
    return res;
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw_data("cannot open '" + path + "' for writing");
    out << ds.y_name << ',' << ds.d_name << ',' << ds.x_name;
    for (std::size_t j = 1; j < ds.z_names.size(); ++j) out << ',' << ds.z_names[j];
    out << '\n';
    char buf[32];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << sep;
    };
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        put(ds.y[i], ',');
        put(ds.d[i], ',');
        const bool more = ds.dz() > 1;
        put(ds.x[i], more ? ',' : '\n');
        for (Eigen::Index j = 1; j < ds.dz(); ++j)
            put(ds.z(i, j), j + 1 == ds.dz() ? '\n' : ',');
    }
}

}  // namespace madml
