// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokencake/trace.hpp"

namespace tokencake {

struct TimelinePoint {
    double t_ms = 0.0;
    double value = 0.0;
};

struct MetricsReport {
    /// Set when the trace ends with a truncation marker.
    bool partial = false;
    std::size_t apps_arrived = 0;
    std::size_t apps_completed = 0;
    double avg_e2e_latency_ms = 0.0;
    /// Nearest-rank 95th percentile; not a figure the original evaluation reports.
    double p95_e2e_latency_ms = 0.0;
    std::map<std::string, double> per_type_avg_latency_ms;
    std::vector<TimelinePoint> gpu_utilization_timeline;
    std::vector<TimelinePoint> effective_utilization_timeline;
    double mean_gpu_utilization = 0.0;
    double mean_effective_utilization = 0.0;
    double mean_stalled_fraction = 0.0;
    double peak_stalled_fraction = 0.0;
    std::int64_t abnormal_agent_count = 0;
    std::int64_t preemption_count = 0;
    std::int64_t critical_inversion_count = 0;
    std::int64_t offload_count = 0;
    std::int64_t upload_stall_count = 0;
    double tokens_per_second = 0.0;
    double makespan_ms = 0.0;
};

/// Pure function of the trace. Utilisation means are time weighted over the
/// span between the first and last sample.
MetricsReport aggregate(const Trace& trace);

/// Nearest-rank percentile of an unsorted sample; 0 for an empty one.
double nearest_rank(std::vector<double> values, double pct);

/// Instances whose duration exceeds 1.5x the mean of their group.
std::int64_t count_abnormal(const std::map<std::string, std::vector<double>>& durations_by_type);

struct ComparisonInput {
    std::string label;
    /// Runs are only comparable when their scenario keys match.
    std::string scenario_key;
    MetricsReport report;
};

struct ComparisonRow {
    std::string scenario_key;
    std::string metric;
    std::string baseline;
    std::string candidate;
    double baseline_value = 0.0;
    double candidate_value = 0.0;
    double delta = 0.0;
    /// candidate / baseline; 1 when both are zero.
    double ratio = 1.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
};

/// The first input is the baseline. Throws std::invalid_argument with fewer
/// than two inputs or when scenario keys differ.
ComparisonTable compare(std::span<const ComparisonInput> inputs);

/// Element-wise mean of scalar metrics (timelines are dropped). Used for seed averages.
MetricsReport mean_report(std::span<const MetricsReport> reports);

/// Names and values of the scalar metrics, in output column order.
std::vector<std::pair<std::string, double>> scalar_metrics(const MetricsReport& report);

std::string format_number(double v);
void write_comparison_csv(std::ostream& out, const ComparisonTable& table);
void write_comparison_text(std::ostream& out, const ComparisonTable& table);

}  // namespace tokencake
