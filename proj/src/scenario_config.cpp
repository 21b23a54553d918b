// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/scenario_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace tokencake {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& known) {
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) throw ScenarioError("unknown key '" + key + "' in " + where);
    }
}

const json* section(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end()) return nullptr;
    if (!it->is_object()) throw ScenarioError(std::string("'") + key + "' must be an object");
    return &*it;
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ScenarioError(std::string("'") + key + "' must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ScenarioError(std::string("'") + key + "' must be a string");
    } else {
        if (!it->is_number()) throw ScenarioError(std::string("'") + key + "' must be a number");
        if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->get<std::int64_t>() < 0)) {
                throw ScenarioError(std::string("'") + key + "' must be a non-negative integer");
            }
        }
    }
    out = it->get<T>();
}

Distribution read_dist(const json& j, const std::string& where) {
    try {
        auto d = j.get<Distribution>();
        if (!d.valid()) throw ScenarioError("invalid distribution parameters in " + where);
        return d;
    } catch (const json::exception& e) {
        throw ScenarioError("bad distribution in " + where + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ScenarioError("bad distribution in " + where + ": " + e.what());
    }
}

PolicyKind read_policy(const json& j) {
    if (!j.is_string()) throw ScenarioError("policy must be a string");
    auto p = parse_policy(j.get<std::string>());
    if (!p) throw ScenarioError("unknown policy '" + j.get<std::string>() + "'");
    return *p;
}

}  // namespace

ScenarioFile parse_scenario(const json& doc, const std::string& base_dir) {
    if (!doc.is_object()) throw ScenarioError("scenario must be a JSON object");
    reject_unknown(doc, "scenario",
                   {"name", "app", "qps", "duration_s", "seed", "horizon_s", "policy", "engine", "cost",
                    "time_scheduler", "space_scheduler", "lengths", "tool_latency", "qps_grid", "seeds", "policies"});
    ScenarioFile f;
    read(doc, "name", f.name);
    read(doc, "app", f.graph);
    if (f.graph != "code_writer" && f.graph != "deep_research") {
        std::filesystem::path p(f.graph);
        if (p.is_relative()) f.graph = (std::filesystem::path(base_dir) / p).lexically_normal().string();
    }
    f.scenario.app = f.graph;
    read(doc, "qps", f.scenario.qps);
    read(doc, "duration_s", f.scenario.duration_s);
    read(doc, "seed", f.scenario.seed);
    if (auto it = doc.find("horizon_s"); it != doc.end()) {
        if (!it->is_number()) throw ScenarioError("'horizon_s' must be a number");
        f.engine.horizon_ms = it->get<double>() * 1000.0;
    }
    if (auto it = doc.find("policy"); it != doc.end()) f.policy = read_policy(*it);

    auto& e = f.engine;
    if (const auto* s = section(doc, "engine")) {
        reject_unknown(*s, "engine",
                       {"step_base_ms", "step_per_seq_ms", "prefill_tokens_per_ms", "max_batch_size",
                        "block_size_tokens", "device_blocks", "host_memory_gb", "block_bytes", "admission_watermark",
                        "host_buffering", "throughput_window_steps", "progress_interval_ms"});
        read(*s, "step_base_ms", e.step_base_ms);
        read(*s, "step_per_seq_ms", e.step_per_seq_ms);
        read(*s, "prefill_tokens_per_ms", e.prefill_tokens_per_ms);
        read(*s, "max_batch_size", e.max_batch_size);
        read(*s, "block_size_tokens", e.block_size_tokens);
        read(*s, "device_blocks", e.device_blocks);
        read(*s, "host_memory_gb", e.host_memory_gb);
        read(*s, "block_bytes", e.block_bytes);
        read(*s, "admission_watermark", e.admission_watermark);
        read(*s, "host_buffering", e.host_buffering);
        read(*s, "throughput_window_steps", e.throughput_window_steps);
        read(*s, "progress_interval_ms", e.progress_interval_ms);
    }
    if (const auto* s = section(doc, "cost")) {
        reject_unknown(*s, "cost", {"roundtrip_ms_per_4096_blocks", "offload_fraction", "recompute_ms_per_4096_blocks"});
        read(*s, "roundtrip_ms_per_4096_blocks", e.cost.roundtrip_ms_per_4096_blocks);
        read(*s, "offload_fraction", e.cost.offload_fraction);
        read(*s, "recompute_ms_per_4096_blocks", e.cost.recompute_ms_per_4096_blocks);
    }
    if (const auto* s = section(doc, "time_scheduler")) {
        reject_unknown(*s, "time_scheduler",
                       {"alpha", "beta", "reservation_lead_ms", "reservation_cycles", "reservation_tick_ms"});
        read(*s, "alpha", e.alpha);
        read(*s, "beta", e.beta);
        read(*s, "reservation_lead_ms", e.upload.reservation_lead_ms);
        read(*s, "reservation_cycles", e.upload.reservation_cycles);
        read(*s, "reservation_tick_ms", e.upload.reservation_tick_ms);
    }
    if (const auto* s = section(doc, "space_scheduler")) {
        reject_unknown(*s, "space_scheduler",
                       {"w_static", "priority_wait_unit_ms", "gpu_usage_high", "gpu_usage_low", "adjustment_step", "reserve_ratio_max",
                        "critical_ratio", "update_period_steps"});
        read(*s, "w_static", e.w_static);
        read(*s, "priority_wait_unit_ms", e.priority_wait_unit_ms);
        read(*s, "gpu_usage_high", e.partition.gpu_usage_high);
        read(*s, "gpu_usage_low", e.partition.gpu_usage_low);
        read(*s, "adjustment_step", e.partition.adjustment_step);
        read(*s, "reserve_ratio_max", e.partition.reserve_ratio_max);
        read(*s, "critical_ratio", e.partition.critical_ratio);
        read(*s, "update_period_steps", e.partition.update_period_steps);
    }
    if (const auto* s = section(doc, "lengths")) {
        for (const auto& [type, spec] : s->items()) {
            if (!spec.is_object()) throw ScenarioError("lengths." + type + " must be an object");
            reject_unknown(spec, "lengths." + type, {"prompt", "output"});
            LengthOverride lo;
            if (spec.contains("prompt")) lo.prompt = read_dist(spec["prompt"], "lengths." + type + ".prompt");
            if (spec.contains("output")) lo.output = read_dist(spec["output"], "lengths." + type + ".output");
            f.scenario.lengths[type] = lo;
        }
    }
    if (const auto* s = section(doc, "tool_latency")) {
        for (const auto& [name, spec] : s->items()) {
            auto tool = parse_tool_class(name);
            if (!tool) throw ScenarioError("unknown tool class '" + name + "'");
            f.scenario.tool_latency[*tool] = read_dist(spec, "tool_latency." + name);
        }
    }
    if (auto it = doc.find("qps_grid"); it != doc.end()) {
        if (!it->is_array() || it->empty()) throw ScenarioError("'qps_grid' must be a non-empty array");
        f.qps_grid.clear();
        for (const auto& q : *it) {
            if (!q.is_number() || q.get<double>() < 0.0) throw ScenarioError("qps_grid entries must be numbers >= 0");
            f.qps_grid.push_back(q.get<double>());
        }
    }
    if (auto it = doc.find("seeds"); it != doc.end()) {
        if (!it->is_array() || it->empty()) throw ScenarioError("'seeds' must be a non-empty array");
        f.seeds.clear();
        for (const auto& s : *it) {
            if (!s.is_number_unsigned()) throw ScenarioError("seeds must be non-negative integers");
            f.seeds.push_back(s.get<std::uint64_t>());
        }
    }
    if (auto it = doc.find("policies"); it != doc.end()) {
        if (!it->is_array() || it->empty()) throw ScenarioError("'policies' must be a non-empty array");
        f.policies.clear();
        for (const auto& p : *it) f.policies.push_back(read_policy(p));
    }

    if (!(f.scenario.qps >= 0.0)) throw ScenarioError("qps must be >= 0");
    if (!(f.scenario.duration_s >= 0.0)) throw ScenarioError("duration_s must be >= 0");
    try {
        engine_for(f, f.policy).validate();
    } catch (const std::invalid_argument& err) {
        throw ScenarioError(err.what());
    }
    return f;
}

ScenarioFile load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ScenarioError("scenario file '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        const auto base = std::filesystem::path(path).parent_path().string();
        return parse_scenario(doc, base.empty() ? "." : base);
    } catch (const ScenarioError& e) {
        throw ScenarioError("scenario file '" + path + "': " + e.what());
    }
}

json scenario_to_json(const ScenarioFile& f) {
    const auto& e = f.engine;
    json j;
    j["name"] = f.name;
    j["app"] = f.graph;
    j["qps"] = f.scenario.qps;
    j["duration_s"] = f.scenario.duration_s;
    j["seed"] = f.scenario.seed;
    j["horizon_s"] = e.horizon_ms / 1000.0;
    j["policy"] = std::string(to_string(f.policy));
    j["engine"] = {{"step_base_ms", e.step_base_ms},
                   {"step_per_seq_ms", e.step_per_seq_ms},
                   {"prefill_tokens_per_ms", e.prefill_tokens_per_ms},
                   {"max_batch_size", e.max_batch_size},
                   {"block_size_tokens", e.block_size_tokens},
                   {"device_blocks", e.device_blocks},
                   {"host_memory_gb", e.host_memory_gb},
                   {"block_bytes", e.block_bytes},
                   {"admission_watermark", e.admission_watermark},
                   {"host_buffering", e.host_buffering},
                   {"throughput_window_steps", e.throughput_window_steps}};
    j["cost"] = {{"roundtrip_ms_per_4096_blocks", e.cost.roundtrip_ms_per_4096_blocks},
                 {"offload_fraction", e.cost.offload_fraction},
                 {"recompute_ms_per_4096_blocks", e.cost.recompute_ms_per_4096_blocks}};
    j["time_scheduler"] = {{"alpha", e.alpha},
                           {"beta", e.beta},
                           {"reservation_lead_ms", e.upload.reservation_lead_ms},
                           {"reservation_cycles", e.upload.reservation_cycles},
                           {"reservation_tick_ms", e.upload.reservation_tick_ms}};
    j["space_scheduler"] = {{"w_static", e.w_static},
                            {"priority_wait_unit_ms", e.priority_wait_unit_ms},
                            {"gpu_usage_high", e.partition.gpu_usage_high},
                            {"gpu_usage_low", e.partition.gpu_usage_low},
                            {"adjustment_step", e.partition.adjustment_step},
                            {"reserve_ratio_max", e.partition.reserve_ratio_max},
                            {"critical_ratio", e.partition.critical_ratio},
                            {"update_period_steps", e.partition.update_period_steps}};
    json lengths = json::object();
    for (const auto& [type, lo] : f.scenario.lengths) {
        json o = json::object();
        if (lo.prompt) o["prompt"] = *lo.prompt;
        if (lo.output) o["output"] = *lo.output;
        lengths[type] = o;
    }
    j["lengths"] = lengths;
    json tools = json::object();
    for (const auto& [tool, d] : f.scenario.tool_latency) tools[std::string(to_string(tool))] = d;
    j["tool_latency"] = tools;
    j["qps_grid"] = f.qps_grid;
    j["seeds"] = f.seeds;
    json pols = json::array();
    for (auto p : f.policies) pols.push_back(std::string(to_string(p)));
    j["policies"] = pols;
    return j;
}

EngineConfig engine_for(const ScenarioFile& file, PolicyKind policy) {
    EngineConfig cfg = file.engine;
    cfg.policy = PolicyFlags::of(policy);
    return cfg;
}

}  // namespace tokencake
