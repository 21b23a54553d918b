// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tokencake/metrics.hpp"
#include "tokencake/scenario_config.hpp"

namespace tokencake {

struct RunSpec {
    double qps = 0.0;
    PolicyKind policy = PolicyKind::Tokencake;
    std::uint64_t seed = 1;
};

struct RunOutcome {
    RunSpec spec;
    MetricsReport report;
    std::uint64_t trace_hash = 0;
    bool truncated = false;
    /// Only filled when traces were requested.
    Trace trace;
};

/// One run of the scenario file at the given grid point.
RunOutcome run_one(const ScenarioFile& file, const ValidatedGraph& graph, const RunSpec& spec, bool keep_trace = false);

/// Cartesian product qps x policy x seed, ordered in that nesting whatever
/// the number of worker threads.
std::vector<RunSpec> sweep_grid(const ScenarioFile& file);
std::vector<RunOutcome> run_sweep(const ScenarioFile& file, const ValidatedGraph& graph,
                                  const std::vector<RunSpec>& grid, int jobs, bool keep_traces = false);

/// "<name>@qps=<q>", the comparability key of a grid point.
std::string scenario_key(const ScenarioFile& file, double qps);

void write_report_header_csv(std::ostream& out);
void write_report_row_csv(std::ostream& out, const std::string& scenario, const RunSpec& spec,
                          const MetricsReport& report);
void write_report_jsonl(std::ostream& out, const std::string& scenario, const RunSpec& spec,
                        const MetricsReport& report);

/// Seed-averaged comparison of every policy against the first, per qps point.
ComparisonTable compare_sweep(const ScenarioFile& file, const std::vector<RunOutcome>& outcomes);

/// Writes latency_vs_qps.dat, utilization_timeline.dat, abnormal_agents.dat and
/// plots.gp under `dir`. Returns the data file names.
std::vector<std::string> write_plots(const std::string& dir, const ScenarioFile& file,
                                     const std::vector<RunOutcome>& outcomes);

}  // namespace tokencake
