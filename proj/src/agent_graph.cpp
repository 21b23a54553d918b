// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/agent_graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

namespace tokencake {

std::string_view to_string(ToolClass tool) {
    switch (tool) {
        case ToolClass::ShortFs: return "short_fs";
        case ToolClass::ShortGit: return "short_git";
        case ToolClass::ShortSearch: return "short_search";
        case ToolClass::Db: return "db";
        case ToolClass::MediumSearch: return "medium_search";
        case ToolClass::AiGeneration: return "ai_generation";
    }
    return "unknown";
}

std::optional<ToolClass> parse_tool_class(std::string_view name) {
    for (auto tool : {ToolClass::ShortFs, ToolClass::ShortGit, ToolClass::ShortSearch, ToolClass::Db,
                      ToolClass::MediumSearch, ToolClass::AiGeneration}) {
        if (to_string(tool) == name) return tool;
    }
    return std::nullopt;
}

std::string_view to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::DuplicateId: return "duplicate id";
        case ViolationKind::DanglingEdge: return "dangling edge";
        case ViolationKind::DuplicateEdge: return "duplicate edge";
        case ViolationKind::Cycle: return "cycle";
        case ViolationKind::Unreachable: return "unreachable";
        case ViolationKind::EmptyStages: return "empty stages";
        case ViolationKind::DuplicateStage: return "duplicate stage";
        case ViolationKind::NonPositiveHint: return "non-positive hint";
        case ViolationKind::NonPositiveParam: return "non-positive parameter";
        case ViolationKind::EmptyGraph: return "empty graph";
    }
    return "unknown";
}

bool ValidationReport::has(ViolationKind kind) const {
    return std::any_of(violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; });
}

std::string ValidationReport::summary() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < violations.size(); ++i) {
        const auto& v = violations[i];
        if (i) out << "; ";
        out << to_string(v.kind);
        if (!v.node_id.empty()) out << " at '" << v.node_id << "'";
        if (!v.detail.empty()) out << " (" << v.detail << ")";
    }
    return out.str();
}

namespace {

struct Adjacency {
    std::map<std::string, NodeIndex, std::less<>> index;
    std::vector<std::vector<NodeIndex>> succ;
    std::vector<std::vector<NodeIndex>> pred;
};

// Kahn's algorithm; returns the processed prefix, which is short of all nodes iff a cycle exists.
std::vector<NodeIndex> kahn_order(const std::vector<std::vector<NodeIndex>>& succ,
                                  const std::vector<std::vector<NodeIndex>>& pred) {
    const auto n = succ.size();
    std::vector<std::size_t> indeg(n);
    std::deque<NodeIndex> ready;
    for (NodeIndex i = 0; i < n; ++i) {
        indeg[i] = pred[i].size();
        if (indeg[i] == 0) ready.push_back(i);
    }
    std::vector<NodeIndex> order;
    order.reserve(n);
    while (!ready.empty()) {
        auto u = ready.front();
        ready.pop_front();
        order.push_back(u);
        for (auto v : succ[u]) {
            if (--indeg[v] == 0) ready.push_back(v);
        }
    }
    return order;
}

}  // namespace

ValidationReport validate_graph(const AppGraph& graph) {
    ValidationReport report;
    auto add = [&](ViolationKind kind, std::string id, std::string detail = {}) {
        report.violations.push_back({kind, std::move(id), std::move(detail)});
    };

    if (graph.nodes.empty()) add(ViolationKind::EmptyGraph, "");

    Adjacency adj;
    for (NodeIndex i = 0; i < graph.nodes.size(); ++i) {
        const auto& node = graph.nodes[i];
        if (!adj.index.emplace(node.id, i).second) add(ViolationKind::DuplicateId, node.id);
        if (!node.prompt_tokens.valid()) add(ViolationKind::NonPositiveParam, node.id, "prompt_tokens_dist");
        if (!node.output_tokens.valid()) add(ViolationKind::NonPositiveParam, node.id, "output_tokens_dist");
        if (node.call) {
            const auto& call = *node.call;
            if (call.stages.empty()) add(ViolationKind::EmptyStages, node.id);
            std::set<std::string> seen;
            for (const auto& stage : call.stages) {
                if (!seen.insert(stage).second) add(ViolationKind::DuplicateStage, node.id, stage);
            }
            if (call.predict_time_ms && !(*call.predict_time_ms > 0.0)) add(ViolationKind::NonPositiveHint, node.id);
            if (call.latency && !call.latency->valid()) add(ViolationKind::NonPositiveParam, node.id, "latency_dist");
        }
    }

    const auto n = graph.nodes.size();
    adj.succ.assign(n, {});
    adj.pred.assign(n, {});
    std::set<std::pair<NodeIndex, NodeIndex>> seen_edges;
    for (const auto& e : graph.edges) {
        auto from = adj.index.find(e.from);
        auto to = adj.index.find(e.to);
        if (from == adj.index.end() || to == adj.index.end()) {
            add(ViolationKind::DanglingEdge, from == adj.index.end() ? e.from : e.to, e.from + "->" + e.to);
            continue;
        }
        if (!seen_edges.emplace(from->second, to->second).second) {
            add(ViolationKind::DuplicateEdge, e.from, e.from + "->" + e.to);
            continue;
        }
        adj.succ[from->second].push_back(to->second);
        adj.pred[to->second].push_back(from->second);
    }

    const auto order = kahn_order(adj.succ, adj.pred);
    if (order.size() != n) {
        std::vector<bool> done(n, false);
        for (auto i : order) done[i] = true;
        for (NodeIndex i = 0; i < n; ++i) {
            if (!done[i]) add(ViolationKind::Cycle, graph.nodes[i].id);
        }
    } else {
        // Acyclic graphs are always covered from their sources, but keep the check explicit.
        std::vector<bool> seen(n, false);
        std::deque<NodeIndex> frontier;
        for (NodeIndex i = 0; i < n; ++i) {
            if (adj.pred[i].empty()) {
                seen[i] = true;
                frontier.push_back(i);
            }
        }
        while (!frontier.empty()) {
            auto u = frontier.front();
            frontier.pop_front();
            for (auto v : adj.succ[u]) {
                if (!seen[v]) {
                    seen[v] = true;
                    frontier.push_back(v);
                }
            }
        }
        for (NodeIndex i = 0; i < n; ++i) {
            if (!seen[i]) add(ViolationKind::Unreachable, graph.nodes[i].id);
        }
    }
    return report;
}

ValidatedGraph ValidatedGraph::create(AppGraph graph) {
    auto report = validate_graph(graph);
    if (!report.ok()) throw GraphError("invalid graph '" + graph.name + "': " + report.summary());

    auto data = std::make_shared<Data>();
    const auto n = graph.nodes.size();
    data->succ.assign(n, {});
    data->pred.assign(n, {});
    for (NodeIndex i = 0; i < n; ++i) data->index.emplace(graph.nodes[i].id, i);
    for (const auto& e : graph.edges) {
        auto u = data->index.at(e.from);
        auto v = data->index.at(e.to);
        data->succ[u].push_back(v);
        data->pred[v].push_back(u);
    }
    for (NodeIndex i = 0; i < n; ++i) {
        if (data->pred[i].empty()) data->entries.push_back(i);
    }
    data->topo = kahn_order(data->succ, data->pred);
    std::set<std::string> types;
    for (const auto& node : graph.nodes) types.insert(node.agent_type);
    data->agent_types.assign(types.begin(), types.end());
    data->graph = std::move(graph);
    return ValidatedGraph(std::move(data));
}

NodeIndex ValidatedGraph::index_of(std::string_view id) const {
    auto it = data_->index.find(id);
    if (it == data_->index.end()) throw GraphError("unknown node '" + std::string(id) + "'");
    return it->second;
}

bool ValidatedGraph::contains(std::string_view id) const { return data_->index.find(id) != data_->index.end(); }

namespace {

std::vector<int> depth_vector(const ValidatedGraph& graph) {
    std::vector<int> depth(graph.size(), 1);
    for (auto u : graph.topo_order()) {
        for (auto v : graph.successors(u)) depth[v] = std::max(depth[v], depth[u] + 1);
    }
    return depth;
}

}  // namespace

std::map<std::string, int> compute_depths(const ValidatedGraph& graph) {
    const auto depth = depth_vector(graph);
    std::map<std::string, int> out;
    for (NodeIndex i = 0; i < graph.size(); ++i) out.emplace(graph.node(i).id, depth[i]);
    return out;
}

StaticPriorityRecord static_priority_record(const ValidatedGraph& graph, std::string_view node_id, double w_static) {
    if (!(w_static > 0.0)) throw std::invalid_argument("w_static must be positive");
    const auto idx = graph.index_of(node_id);
    StaticPriorityRecord rec;
    rec.node_id = std::string(node_id);
    rec.node_depth = depth_vector(graph)[idx];
    rec.node_out_degree = static_cast<int>(graph.successors(idx).size());
    rec.w_static = w_static;
    rec.score = w_static * rec.node_depth * rec.node_out_degree;
    return rec;
}

double static_priority(const ValidatedGraph& graph, std::string_view node_id, double w_static) {
    return static_priority_record(graph, node_id, w_static).score;
}

double agent_type_static_score(const ValidatedGraph& graph, std::string_view agent_type, double w_static) {
    if (!(w_static > 0.0)) throw std::invalid_argument("w_static must be positive");
    const auto depth = depth_vector(graph);
    std::optional<double> best;
    for (NodeIndex i = 0; i < graph.size(); ++i) {
        if (graph.node(i).agent_type != agent_type) continue;
        const double score = w_static * depth[i] * static_cast<double>(graph.successors(i).size());
        best = best ? std::max(*best, score) : score;
    }
    if (!best) throw GraphError("unknown agent type '" + std::string(agent_type) + "'");
    return *best;
}

AppGraph graph_from_json(const nlohmann::json& doc) {
    AppGraph graph;
    graph.name = doc.value("name", std::string{});
    for (const auto& jn : doc.at("nodes")) {
        Node node;
        node.id = jn.at("id").get<std::string>();
        node.agent_type = jn.at("agent_type").get<std::string>();
        if (jn.contains("prompt_tokens_dist")) node.prompt_tokens = jn.at("prompt_tokens_dist").get<Distribution>();
        if (jn.contains("output_tokens_dist")) node.output_tokens = jn.at("output_tokens_dist").get<Distribution>();
        node.model_hint = jn.value("model_hint", std::string{});
        const auto kind = jn.value("kind", std::string{"agent"});
        if (kind == "func") {
            FuncCall call;
            if (jn.contains("stages")) call.stages = jn.at("stages").get<std::vector<std::string>>();
            if (jn.contains("predict_time_ms")) call.predict_time_ms = jn.at("predict_time_ms").get<double>();
            if (jn.contains("latency_dist")) call.latency = jn.at("latency_dist").get<Distribution>();
            if (jn.contains("tool_class")) {
                const auto name = jn.at("tool_class").get<std::string>();
                call.tool_class = parse_tool_class(name);
                if (!call.tool_class) throw GraphError("unknown tool class '" + name + "' on node '" + node.id + "'");
            }
            node.call = std::move(call);
        } else if (kind != "agent") {
            throw GraphError("unknown node kind '" + kind + "' on node '" + node.id + "'");
        }
        graph.nodes.push_back(std::move(node));
    }
    if (doc.contains("edges")) {
        for (const auto& je : doc.at("edges")) {
            if (!je.is_array() || je.size() != 2) throw GraphError("edge must be a [from, to] pair");
            graph.add_edge(je[0].get<std::string>(), je[1].get<std::string>());
        }
    }
    return graph;
}

nlohmann::json graph_to_json(const AppGraph& graph) {
    nlohmann::json doc;
    if (!graph.name.empty()) doc["name"] = graph.name;
    auto& nodes = doc["nodes"] = nlohmann::json::array();
    for (const auto& node : graph.nodes) {
        nlohmann::json jn{{"id", node.id},
                          {"kind", node.is_func() ? "func" : "agent"},
                          {"agent_type", node.agent_type},
                          {"prompt_tokens_dist", node.prompt_tokens},
                          {"output_tokens_dist", node.output_tokens}};
        if (!node.model_hint.empty()) jn["model_hint"] = node.model_hint;
        if (node.call) {
            jn["stages"] = node.call->stages;
            if (node.call->predict_time_ms) jn["predict_time_ms"] = *node.call->predict_time_ms;
            if (node.call->latency) jn["latency_dist"] = *node.call->latency;
            if (node.call->tool_class) jn["tool_class"] = std::string(to_string(*node.call->tool_class));
        }
        nodes.push_back(std::move(jn));
    }
    auto& edges = doc["edges"] = nlohmann::json::array();
    for (const auto& e : graph.edges) edges.push_back({e.from, e.to});
    return doc;
}

AppGraph load_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GraphError("cannot open graph file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw GraphError("malformed graph file '" + path + "': " + e.what());
    }
    try {
        return graph_from_json(doc);
    } catch (const nlohmann::json::exception& e) {
        throw GraphError("malformed graph file '" + path + "': " + e.what());
    }
}

}  // namespace tokencake
