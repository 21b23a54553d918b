// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/space_scheduler.hpp"

#include <algorithm>
#include <cmath>

namespace tokencake {

double dynamic_priority(double time_wait_ms, double tokens_req) {
    if (time_wait_ms <= 0.0) return 0.0;
    const double ratio = tokens_req / std::max(time_wait_ms, kMinWaitMs);
    return time_wait_ms * std::log(std::max(ratio, 1.0));
}

std::vector<HybridScore> score_agent_types(std::span<const WaitingSnapshot> waiting, const ValidatedGraph& graph,
                                           double w_static) {
    std::vector<HybridScore> scores;
    scores.reserve(graph.agent_types().size());
    for (const auto& type : graph.agent_types()) {
        scores.push_back({type, agent_type_static_score(graph, type, w_static), 0.0});
    }
    for (const auto& w : waiting) {
        auto it = std::lower_bound(scores.begin(), scores.end(), w.agent_type,
                                   [](const HybridScore& s, const std::string& t) { return s.agent_type < t; });
        if (it != scores.end() && it->agent_type == w.agent_type) it->dynamic_score += dynamic_priority(w.wait_ms, w.tokens);
    }
    std::stable_sort(scores.begin(), scores.end(), [](const HybridScore& a, const HybridScore& b) {
        if (a.combined() != b.combined()) return a.combined() > b.combined();
        return a.agent_type < b.agent_type;
    });
    return scores;
}

double score_of(std::span<const HybridScore> scores, const std::string& agent_type) {
    for (const auto& s : scores) {
        if (s.agent_type == agent_type) return s.combined();
    }
    return 0.0;
}

std::size_t critical_count(std::size_t type_count, double critical_ratio) {
    if (type_count == 0) return 0;
    const auto n = static_cast<std::size_t>(std::floor(critical_ratio * static_cast<double>(type_count) + 0.5));
    return std::clamp<std::size_t>(n, 1, type_count);
}

std::vector<std::string> select_critical(std::span<const HybridScore> scores, double critical_ratio) {
    std::vector<HybridScore> ranked(scores.begin(), scores.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const HybridScore& a, const HybridScore& b) {
        if (a.combined() != b.combined()) return a.combined() > b.combined();
        return a.agent_type < b.agent_type;
    });
    const auto n = critical_count(ranked.size(), critical_ratio);
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(ranked[i].agent_type);
    return out;
}

PartitionPlan update_memory_reservations(const PartitionPlan& plan, BlockCount total_blocks, const UsageSample& usage,
                                         std::span<const HybridScore> scores) {
    PartitionPlan next;
    next.params = plan.params;
    const auto& p = plan.params;
    const double total = static_cast<double>(total_blocks);

    // Phase 1: size of the reserved pool.
    double reserve_ratio = plan.total_reserve_ratio;
    const double ratio = total > 0.0 ? usage.used_blocks / total : 0.0;
    if (ratio >= p.gpu_usage_high) {
        reserve_ratio += p.adjustment_step;
    } else if (ratio <= p.gpu_usage_low) {
        reserve_ratio -= p.adjustment_step;
    }
    next.total_reserve_ratio = std::clamp(reserve_ratio, 0.0, p.reserve_ratio_max);
    next.r_total = total * next.total_reserve_ratio;

    // Phase 2: split among critical types.
    next.critical_set = select_critical(scores, p.critical_ratio);
    if (next.critical_set.empty()) return next;

    double s_total = 0.0;
    for (const auto& type : next.critical_set) s_total += score_of(scores, type);

    std::vector<double> final_ratio;
    final_ratio.reserve(next.critical_set.size());
    double sum = 0.0;
    for (const auto& type : next.critical_set) {
        auto it = usage.by_type.find(type);
        const double mem_ratio = total > 0.0 && it != usage.by_type.end() ? it->second / total : 0.0;
        const double priority_ratio =
            s_total > 0.0 ? score_of(scores, type) / s_total : 1.0 / static_cast<double>(next.critical_set.size());
        final_ratio.push_back((mem_ratio + priority_ratio) / 2.0);
        sum += final_ratio.back();
    }
    if (sum > 1.0) {
        for (auto& r : final_ratio) r /= sum;
    }
    for (std::size_t i = 0; i < next.critical_set.size(); ++i) {
        next.reserve_num[next.critical_set[i]] = static_cast<BlockCount>(std::floor(final_ratio[i] * next.r_total));
    }
    return next;
}

}  // namespace tokencake
