// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokencake/agent_graph.hpp"
#include "tokencake/block_memory.hpp"

namespace tokencake {

/// Floor on the waiting time used inside the log term.
inline constexpr double kMinWaitMs = 1.0;

/// time_wait * ln(max(tokens / max(time_wait, 1 ms), 1)). Never negative.
double dynamic_priority(double time_wait_ms, double tokens_req);

/// Static and dynamic scores are summed; the one place to change the combination rule.
inline double combine_scores(double static_score, double dynamic_score) { return static_score + dynamic_score; }

struct WaitingSnapshot {
    std::string agent_type;
    double wait_ms = 0.0;
    double tokens = 0.0;
};

struct HybridScore {
    std::string agent_type;
    double static_score = 0.0;
    double dynamic_score = 0.0;

    double combined() const { return combine_scores(static_score, dynamic_score); }
};

/// One score per agent type of the graph, highest combined first, ties by type name.
std::vector<HybridScore> score_agent_types(std::span<const WaitingSnapshot> waiting, const ValidatedGraph& graph,
                                           double w_static);

/// Combined score of a type, or 0 when it is not listed.
double score_of(std::span<const HybridScore> scores, const std::string& agent_type);

/// Number of types designated critical: ratio x count rounded half up, at least one.
std::size_t critical_count(std::size_t type_count, double critical_ratio);

/// Top fraction of types by combined score, in rank order.
std::vector<std::string> select_critical(std::span<const HybridScore> scores, double critical_ratio);

struct PartitionParams {
    double gpu_usage_high = 0.85;
    double gpu_usage_low = 0.50;
    double adjustment_step = 0.05;
    double reserve_ratio_max = 0.40;
    double critical_ratio = 0.25;
    int update_period_steps = 50;
};

struct UsageSample {
    /// Device blocks in use over the last interval.
    double used_blocks = 0.0;
    std::map<std::string, double> by_type;
};

struct PartitionPlan {
    PartitionParams params;
    double total_reserve_ratio = 0.0;
    double r_total = 0.0;
    std::vector<std::string> critical_set;
    std::map<std::string, BlockCount> reserve_num;
};

/// Two-phase reservation update. Phase 1 moves the reserved fraction one step
/// toward the observed pressure; phase 2 splits R_total among critical types by
/// the mean of their memory share and priority share (renormalised when the
/// shares sum above one).
PartitionPlan update_memory_reservations(const PartitionPlan& plan, BlockCount total_blocks, const UsageSample& usage,
                                         std::span<const HybridScore> scores);

/// An eviction is a critical inversion when the victim outranks its cause.
inline bool detect_critical_inversion(double evicted_score, double cause_score) { return evicted_score > cause_score; }

}  // namespace tokencake
