#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "madml/dataset.hpp"
#include "madml/estimator.hpp"
#include "madml/simulation.hpp"

namespace madml {

// Everything a run needs, schema-validated (unknown keys rejected). The
// effective config, defaults filled, is echoed into every output JSON and
// can be fed back in to reproduce the run.
struct RunConfig {
    std::uint64_t seed = 0;
    int threads = 0;  // 0: hardware concurrency

    std::string data_path;
    ColumnSchema schema;
    PreprocessConfig preprocess;

    BasisSpec basis;          // knots possibly empty (resolved from data)
    SolverConfig solver;
    PenaltyConfig penalty;
    InferenceConfig inference;

    DgpConfig dgp;
    int sim_reps = 200;
    double sim_eval_x = 1.5;

    std::string out_dir = "out";

    FitConfig fit_config() const;
    McConfig mc_config() const;
    int effective_threads() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace madml
