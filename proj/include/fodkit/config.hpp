#pragma once

#include "fodkit/csd.hpp"
#include "fodkit/experiments.hpp"
#include "fodkit/fod_analysis.hpp"
#include "fodkit/forward_model.hpp"
#include "fodkit/regressor.hpp"

#include "json.hpp"

#include <optional>
#include <string>

namespace fodkit {

using OrderedJson = nlohmann::ordered_json;

// Strict readers: every key is optional (missing keys keep the defaults of
// the target struct) but unknown keys and wrong types throw ConfigError
// naming the offending path.

PhantomSpec phantom_spec_from_json(const nlohmann::json& j, PhantomSpec base = {});
SolverConfig solver_config_from_json(const nlohmann::json& j, SolverConfig base = {});
PeakOptions peak_options_from_json(const nlohmann::json& j, PeakOptions base = {});
ModelSpec model_spec_from_json(const nlohmann::json& j, ModelSpec base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
CohortSpec cohort_spec_from_json(const nlohmann::json& j, CohortSpec base = {});
/// The "experiment" key selects the defaults the rest of the file overrides.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

OrderedJson to_json(const PhantomSpec& s);
OrderedJson to_json(const SolverConfig& s);
OrderedJson to_json(const PeakOptions& s);
OrderedJson to_json(const ModelSpec& s);
OrderedJson to_json(const TrainConfig& s);
OrderedJson to_json(const CohortSpec& s);
OrderedJson to_json(const ExperimentConfig& s);

/// Parses a JSON file (comments not allowed). Throws ConfigError.
nlohmann::json load_json_file(const std::string& path);

/// FODKIT_SEED when set to an unsigned integer.
std::optional<std::uint64_t> seed_from_env();

}  // namespace fodkit
