// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/trace.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace tokencake {

std::string to_jsonl(const TraceEvent& event) {
    Json j;
    j["t_ms"] = event.t_ms;
    j["kind"] = event.kind;
    j["request_id"] = event.request_id;
    j["app_id"] = event.app_id;
    j["agent_type"] = event.agent_type;
    j["blocks"] = event.blocks;
    j["extra"] = event.extra;
    return j.dump();
}

TraceEvent parse_jsonl(std::string_view line) {
    Json j;
    try {
        j = Json::parse(line);
    } catch (const Json::exception& e) {
        throw std::invalid_argument(std::string("malformed trace line: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("trace line is not an object");
    try {
        TraceEvent ev;
        ev.t_ms = j.at("t_ms").get<double>();
        ev.kind = j.at("kind").get<std::string>();
        ev.request_id = j.at("request_id").get<std::int64_t>();
        ev.app_id = j.at("app_id").get<std::int64_t>();
        ev.agent_type = j.at("agent_type").get<std::string>();
        ev.blocks = j.at("blocks").get<std::int64_t>();
        ev.extra = j.value("extra", Json::object());
        return ev;
    } catch (const Json::exception& e) {
        throw std::invalid_argument(std::string("trace line missing field: ") + e.what());
    }
}

void write_trace(std::ostream& out, const Trace& trace) {
    for (const auto& ev : trace) out << to_jsonl(ev) << '\n';
}

Trace read_trace(std::istream& in) {
    Trace trace;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        trace.push_back(parse_jsonl(line));
    }
    return trace;
}

Trace read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file '" + path + "'");
    return read_trace(in);
}

std::uint64_t trace_hash(const Trace& trace) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& ev : trace) {
        for (unsigned char c : to_jsonl(ev)) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= '\n';
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace tokencake
