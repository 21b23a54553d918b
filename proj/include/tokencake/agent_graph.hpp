// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tokencake/distribution.hpp"

namespace tokencake {

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// External tool latency classes (short file/git/search, database, medium search, AI generation).
enum class ToolClass { ShortFs, ShortGit, ShortSearch, Db, MediumSearch, AiGeneration };

std::string_view to_string(ToolClass tool);
std::optional<ToolClass> parse_tool_class(std::string_view name);

/// Function-call metadata carried by a FuncNode.
struct FuncCall {
    std::vector<std::string> stages;
    std::optional<double> predict_time_ms;
    std::optional<Distribution> latency;
    std::optional<ToolClass> tool_class;
};

/// One node of an application graph. A node with `call` set is a FuncNode:
/// it generates, stalls on one external call per stage, and resumes generation
/// on the same KV cache after each call.
struct Node {
    std::string id;
    std::string agent_type;
    Distribution prompt_tokens = Distribution::lognormal(512.0, 0.5);
    Distribution output_tokens = Distribution::lognormal(256.0, 0.5);
    std::string model_hint;
    std::optional<FuncCall> call;

    bool is_func() const { return call.has_value(); }
};

struct Edge {
    std::string from;
    std::string to;
    bool operator==(const Edge&) const = default;
};

/// Mutable, unvalidated application description as read from a graph file.
struct AppGraph {
    std::string name;
    std::vector<Node> nodes;
    std::vector<Edge> edges;

    AppGraph& add_node(Node node) {
        nodes.push_back(std::move(node));
        return *this;
    }
    AppGraph& add_edge(std::string from, std::string to) {
        edges.push_back({std::move(from), std::move(to)});
        return *this;
    }
};

enum class ViolationKind {
    DuplicateId,
    DanglingEdge,
    DuplicateEdge,
    Cycle,
    Unreachable,
    EmptyStages,
    DuplicateStage,
    NonPositiveHint,
    NonPositiveParam,
    EmptyGraph,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    std::string node_id;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool has(ViolationKind kind) const;
    std::string summary() const;
};

ValidationReport validate_graph(const AppGraph& graph);

using NodeIndex = std::size_t;

/// Immutable graph that passed validation. Every structural query below is
/// only available on this type, so an invalid graph cannot reach them.
class ValidatedGraph {
public:
    /// Throws GraphError listing the violations when the graph is invalid.
    static ValidatedGraph create(AppGraph graph);

    const std::string& name() const { return data_->graph.name; }
    std::size_t size() const { return data_->graph.nodes.size(); }
    const std::vector<Node>& nodes() const { return data_->graph.nodes; }
    const std::vector<Edge>& edges() const { return data_->graph.edges; }
    const Node& node(NodeIndex i) const { return data_->graph.nodes[i]; }
    const Node& node(std::string_view id) const { return node(index_of(id)); }
    NodeIndex index_of(std::string_view id) const;
    bool contains(std::string_view id) const;

    const std::vector<NodeIndex>& successors(NodeIndex i) const { return data_->succ[i]; }
    const std::vector<NodeIndex>& predecessors(NodeIndex i) const { return data_->pred[i]; }
    const std::vector<NodeIndex>& entries() const { return data_->entries; }
    /// Nodes in a topological order (stable with respect to declaration order).
    const std::vector<NodeIndex>& topo_order() const { return data_->topo; }
    /// Sorted, de-duplicated agent types.
    const std::vector<std::string>& agent_types() const { return data_->agent_types; }
    const AppGraph& description() const { return data_->graph; }

private:
    struct Data {
        AppGraph graph;
        std::map<std::string, NodeIndex, std::less<>> index;
        std::vector<std::vector<NodeIndex>> succ;
        std::vector<std::vector<NodeIndex>> pred;
        std::vector<NodeIndex> entries;
        std::vector<NodeIndex> topo;
        std::vector<std::string> agent_types;
    };
    explicit ValidatedGraph(std::shared_ptr<const Data> data) : data_(std::move(data)) {}
    std::shared_ptr<const Data> data_;
};

/// Longest-path depth from any entry node; entry nodes have depth 1.
std::map<std::string, int> compute_depths(const ValidatedGraph& graph);

struct StaticPriorityRecord {
    std::string node_id;
    int node_depth = 1;
    int node_out_degree = 0;
    double w_static = 1.0;
    double score = 0.0;
};

StaticPriorityRecord static_priority_record(const ValidatedGraph& graph, std::string_view node_id, double w_static);

/// w_static x depth x out_degree. Throws GraphError on an unknown node and
/// std::invalid_argument when w_static <= 0.
double static_priority(const ValidatedGraph& graph, std::string_view node_id, double w_static);

/// Maximum static priority over the nodes of an agent type.
double agent_type_static_score(const ValidatedGraph& graph, std::string_view agent_type, double w_static);

/// Graph file (JSON) reading and writing.
AppGraph graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const AppGraph& graph);
AppGraph load_graph_file(const std::string& path);

}  // namespace tokencake
