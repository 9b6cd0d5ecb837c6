#pragma once

#include <string>

#include "madml/config.hpp"
#include "madml/estimator.hpp"
#include "madml/simulation.hpp"

namespace madml {

// Plot-ready grid table: x, <value>, sigma, pw_lo, pw_hi, unif_lo, unif_hi
// (10 significant digits); the value column is "ghat" or "cate".
void write_fit_grid_csv(const CateFit& fit, const std::string& path,
                        const std::string& value_name = "ghat");

// Full fit artifact with the effective config echoed; doubles round-trip.
void write_fit_json(const CateFit& fit, const RunConfig& effective, const std::string& path);

// Table-style row layout: one row per (dgp, estimator).
void write_report_csv(const SimulationReport& report, const std::string& path);

void write_report_json(const SimulationReport& report, const RunConfig& effective,
                       const std::string& path);

std::string fit_summary(const CateFit& fit);
std::string report_summary(const SimulationReport& report);

}  // namespace madml
