#pragma once

#include "twipr/sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace twipr {

// Scenario files are JSON objects; see README.md for the schema. Unknown keys,
// wrong types and missing required keys raise ConfigError naming the key path
// (e.g. "lqr.Q"); syntax errors report line and column.
Scenario load_scenario(const std::filesystem::path& path);

// `base_dir` resolves a robot parameter file given by name.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

RobotParams load_robot_params(const std::filesystem::path& path);
RobotParams robot_params_from_json(const nlohmann::json& j, const std::string& where = "robot");

// Fully resolved scenario (robot parameters inlined), stable key order.
nlohmann::json to_json(const Scenario& scn);

// CRC-32 of the canonical dump of to_json(scn), as 8 hex digits.
std::string config_hash(const Scenario& scn);

// A path that exists is used as is; otherwise `name` is looked up as
// scenarios/<name>.json under the working directory and then the source tree.
std::filesystem::path find_scenario(const std::string& name);

}  // namespace twipr
