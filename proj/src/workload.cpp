// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/workload.hpp"

#include <algorithm>

#include "builtin_graphs.hpp"

namespace tokencake {

double tool_latency_center_ms(ToolClass tool) {
    switch (tool) {
        case ToolClass::ShortFs:
        case ToolClass::ShortGit:
        case ToolClass::ShortSearch: return 100.0;
        case ToolClass::Db: return 500.0;
        case ToolClass::MediumSearch: return 3000.0;
        case ToolClass::AiGeneration: return 15000.0;
    }
    return 100.0;
}

Distribution default_tool_latency(ToolClass tool) { return Distribution::poisson(tool_latency_center_ms(tool)); }

double sample_tool_latency(ToolClass tool, std::mt19937_64& rng, const ToolLatencyOverrides& overrides) {
    auto it = overrides.find(tool);
    const auto dist = it == overrides.end() ? default_tool_latency(tool) : it->second;
    return std::max(1.0, dist.sample(rng));
}

std::vector<double> sample_arrivals(double rate_per_s, double duration_s, std::uint64_t seed) {
    std::vector<double> out;
    if (!(rate_per_s > 0.0) || !(duration_s > 0.0)) return out;
    std::mt19937_64 rng(derive_seed(seed, "arrivals"));
    std::exponential_distribution<double> gap(rate_per_s);
    double t = gap(rng);
    while (t < duration_s) {
        out.push_back(t * 1000.0);
        t += gap(rng);
    }
    return out;
}

namespace {

ValidatedGraph parse_builtin(std::string_view text) {
    return ValidatedGraph::create(graph_from_json(nlohmann::json::parse(text)));
}

}  // namespace

ValidatedGraph build_code_writer() { return parse_builtin(builtin::kCodeWriterGraph); }
ValidatedGraph build_deep_research() { return parse_builtin(builtin::kDeepResearchGraph); }

ValidatedGraph load_app_graph(const std::string& name_or_path) {
    if (name_or_path == "code_writer") return build_code_writer();
    if (name_or_path == "deep_research") return build_deep_research();
    return ValidatedGraph::create(load_graph_file(name_or_path));
}

std::pair<Distribution, Distribution> effective_lengths(const Node& node, const Scenario& scenario) {
    auto prompt = node.prompt_tokens;
    auto output = node.output_tokens;
    if (auto it = scenario.lengths.find(node.agent_type); it != scenario.lengths.end()) {
        if (it->second.prompt) prompt = *it->second.prompt;
        if (it->second.output) output = *it->second.output;
    }
    return {prompt, output};
}

Distribution call_latency_distribution(const FuncCall& call, const ToolLatencyOverrides& overrides) {
    if (call.latency) return *call.latency;
    const auto tool = call.tool_class.value_or(ToolClass::ShortFs);
    auto it = overrides.find(tool);
    return it == overrides.end() ? default_tool_latency(tool) : it->second;
}

std::vector<AppInstance> generate_workload(const Scenario& scenario, const ValidatedGraph& graph) {
    const auto arrivals = sample_arrivals(scenario.qps, scenario.duration_s, scenario.seed);
    std::vector<AppInstance> apps;
    apps.reserve(arrivals.size());
    for (std::size_t a = 0; a < arrivals.size(); ++a) {
        AppInstance app;
        app.app_id = a;
        app.arrival_ms = arrivals[a];
        std::mt19937_64 lengths(derive_seed(scenario.seed, "lengths", a));
        std::mt19937_64 tools(derive_seed(scenario.seed, "tools", a));
        for (const auto& node : graph.nodes()) {
            const auto [prompt, output] = effective_lengths(node, scenario);
            NodePlan plan;
            plan.prompt_tokens = prompt.sample_count(lengths);
            const std::size_t segments = node.call ? node.call->stages.size() + 1 : 1;
            for (std::size_t s = 0; s < segments; ++s) plan.segment_outputs.push_back(output.sample_count(lengths));
            if (node.call) {
                const auto dist = call_latency_distribution(*node.call, scenario.tool_latency);
                for (std::size_t s = 0; s < node.call->stages.size(); ++s) {
                    plan.call_latencies_ms.push_back(std::max(1.0, dist.sample(tools)));
                }
            }
            plan.expected_demand_tokens = static_cast<double>(plan.prompt_tokens) + output.mean();
            app.nodes.push_back(std::move(plan));
        }
        apps.push_back(std::move(app));
    }
    return apps;
}

}  // namespace tokencake
