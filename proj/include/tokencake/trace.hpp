// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tokencake {

using Json = nlohmann::ordered_json;

/// One timestamped simulation event. Serialised as a single JSON line with the
/// fields in declaration order; `extra` carries kind-specific values.
struct TraceEvent {
    double t_ms = 0.0;
    std::string kind;
    std::int64_t request_id = -1;
    std::int64_t app_id = -1;
    std::string agent_type;
    std::int64_t blocks = 0;
    Json extra = Json::object();
};

using Trace = std::vector<TraceEvent>;

std::string to_jsonl(const TraceEvent& event);
/// Throws std::invalid_argument on a malformed line.
TraceEvent parse_jsonl(std::string_view line);

void write_trace(std::ostream& out, const Trace& trace);
Trace read_trace(std::istream& in);
Trace read_trace_file(const std::string& path);

/// FNV-1a over the serialised lines.
std::uint64_t trace_hash(const Trace& trace);

}  // namespace tokencake
