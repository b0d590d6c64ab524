#pragma once

#include <nlohmann/json.hpp>

#include "lungad/flow.hpp"
#include "lungad/gmm.hpp"

namespace lungad {

// Fit configuration file (FIT.json):
//   {"gmm": {"max_iters", "rel_tolerance", "ridge"},
//    "nf":  {"n_blocks", "hidden", "clamp", "learning_rate", "batch_size", "epochs", "standardize"}}
// Every key is optional; unknown keys are rejected. Seeds come from --seed.
struct FitFileConfig {
    EmConfig em{};
    FlowFitConfig nf{};
};

FitFileConfig fit_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitFileConfig& cfg);

// Entry point of the `lungad` tool. Returns the process exit status:
// 0 success, 2 validation error, 1 runtime error.
int run_cli(int argc, const char* const* argv);

} // namespace lungad
