#pragma once

#include <json.hpp>
#include <string>

#include "mvsde/bismut.hpp"
#include "mvsde/harnack.hpp"
#include "mvsde/io.hpp"
#include "mvsde/model.hpp"
#include "mvsde/transport.hpp"

namespace mvsde {

// Parsed experiment configuration. Unknown keys anywhere in the tree are
// rejected; the seed is mandatory (no wall-clock default).
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir;
    nlohmann::json raw;

    std::string model_name;
    std::map<std::string, double> model_params;
    DiniModulus modulus = DiniModulus::power(1.0, 0.5);
    bool has_modulus = false;

    SimConfig sim;
    double distance_k = 2.0;
    OTOptions ot;
    EstimatorConfig estimator;
    HarnackConfig harnack;
    std::vector<double> fd_eps{0.1, 0.05};

    nlohmann::json pipeline;  // array of op objects
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_json(const nlohmann::json& j);

DiniModulus modulus_from_json(const nlohmann::json& j);
EmpiricalMeasure measure_from_json(const nlohmann::json& j);
Payoff payoff_by_name(const std::string& name);
PerturbationDirection direction_by_name(const std::string& name, std::size_t dim);

struct ScenarioOutcome {
    int exit_code = 0;  // 0 ok, 1 assertion failed, 2 config invalid, 3 runtime failure
    std::string message;
    std::string out_dir;
    std::size_t assertions_checked = 0;
    std::size_t assertions_failed = 0;
};

// Execute the declared pipeline: per-op JSON + CSV artifacts plus a manifest
// (config hash, seed, versions; timestamps live only here).
ScenarioOutcome run_scenario(const std::string& config_path, const std::string& out_override,
                             const std::uint64_t* seed_override, int threads);

// Merge per-op outputs of a scenario directory into report.json plus tidy
// plot-data CSVs. Fails with MissingManifest when the directory was not
// produced by run_scenario.
int write_report(const std::string& artifact_dir);

extern const char* kVersion;

}  // namespace mvsde
