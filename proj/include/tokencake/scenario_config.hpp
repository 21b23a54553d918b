// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokencake/sim_engine.hpp"
#include "tokencake/workload.hpp"

namespace tokencake {

/// Raised for unreadable or malformed scenario files; the message names the path.
class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scenario file: workload, engine calibration, policy and sweep grid.
struct ScenarioFile {
    std::string name = "scenario";
    /// "code_writer", "deep_research" or a graph file path.
    std::string graph = "code_writer";
    Scenario scenario;
    EngineConfig engine;
    PolicyKind policy = PolicyKind::Tokencake;
    std::vector<double> qps_grid{0.05, 0.25, 0.5, 1.0};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<PolicyKind> policies{PolicyKind::Tokencake, PolicyKind::Retain, PolicyKind::Evict};
};

/// Relative graph paths resolve against `base_dir`. Throws ScenarioError.
ScenarioFile parse_scenario(const nlohmann::json& doc, const std::string& base_dir = ".");
ScenarioFile load_scenario_file(const std::string& path);
nlohmann::json scenario_to_json(const ScenarioFile& file);

/// Engine config for one run of the file under `policy`.
EngineConfig engine_for(const ScenarioFile& file, PolicyKind policy);

}  // namespace tokencake
