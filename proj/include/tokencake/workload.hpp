// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tokencake/agent_graph.hpp"
#include "tokencake/distribution.hpp"

namespace tokencake {

/// Latency centre (ms) of a tool class: 100 ms for the short tools, 500 ms for
/// a database, 3 s for a medium web search and 15 s for AI generation.
double tool_latency_center_ms(ToolClass tool);

/// Default latency distribution of a tool class: Poisson with its centre as the mean.
Distribution default_tool_latency(ToolClass tool);

using ToolLatencyOverrides = std::map<ToolClass, Distribution>;

/// One latency draw in ms, never below 1 ms.
double sample_tool_latency(ToolClass tool, std::mt19937_64& rng, const ToolLatencyOverrides& overrides = {});

/// Poisson arrivals: exponential gaps with mean 1 / rate. Returns timestamps in ms.
std::vector<double> sample_arrivals(double rate_per_s, double duration_s, std::uint64_t seed);

ValidatedGraph build_code_writer();
ValidatedGraph build_deep_research();
/// "code_writer" or "deep_research"; any other name is treated as a graph file path.
ValidatedGraph load_app_graph(const std::string& name_or_path);

struct LengthOverride {
    std::optional<Distribution> prompt;
    std::optional<Distribution> output;
};

struct Scenario {
    std::string app = "code_writer";
    double qps = 0.5;
    double duration_s = 60.0;
    std::uint64_t seed = 1;
    /// Keyed by agent type.
    std::map<std::string, LengthOverride> lengths;
    ToolLatencyOverrides tool_latency;
};

/// Everything random about one node of one application instance, drawn up front
/// so that every policy sees the same workload.
struct NodePlan {
    std::int64_t prompt_tokens = 0;
    /// Output length of each generation segment; FuncNodes have stages + 1 segments.
    std::vector<std::int64_t> segment_outputs;
    std::vector<double> call_latencies_ms;
    /// Prompt plus expected output of the first segment.
    double expected_demand_tokens = 0.0;
};

struct AppInstance {
    std::uint64_t app_id = 0;
    double arrival_ms = 0.0;
    std::vector<NodePlan> nodes;
};

/// Prompt and output distributions after applying per-type overrides.
std::pair<Distribution, Distribution> effective_lengths(const Node& node, const Scenario& scenario);

/// Latency distribution used for a FuncNode's calls.
Distribution call_latency_distribution(const FuncCall& call, const ToolLatencyOverrides& overrides);

/// Samples arrivals and every per-node draw from named sub-streams of the scenario seed.
std::vector<AppInstance> generate_workload(const Scenario& scenario, const ValidatedGraph& graph);

}  // namespace tokencake
