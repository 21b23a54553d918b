// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <spdlog/fmt/fmt.h>

namespace tokencake {

double nearest_rank(std::vector<double> values, double pct) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
}

std::int64_t count_abnormal(const std::map<std::string, std::vector<double>>& durations_by_type) {
    std::int64_t count = 0;
    for (const auto& [type, ds] : durations_by_type) {
        if (ds.empty()) continue;
        double sum = 0.0;
        for (double d : ds) sum += d;
        const double threshold = 1.5 * sum / static_cast<double>(ds.size());
        for (double d : ds) {
            if (d > threshold) ++count;
        }
    }
    return count;
}

namespace {

struct Series {
    std::vector<TimelinePoint> points;

    double time_weighted_mean(double end_ms) const {
        if (points.empty()) return 0.0;
        double area = 0.0;
        double span = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double t1 = i + 1 < points.size() ? points[i + 1].t_ms : end_ms;
            const double d = std::max(0.0, t1 - points[i].t_ms);
            area += points[i].value * d;
            span += d;
        }
        if (span > 0.0) return area / span;
        double sum = 0.0;
        for (const auto& p : points) sum += p.value;
        return sum / static_cast<double>(points.size());
    }
};

double ratio_of(const Json& extra, const char* key, double total) {
    if (total <= 0.0) return 0.0;
    return std::clamp(extra.value(key, 0.0) / total, 0.0, 1.0);
}

}  // namespace

MetricsReport aggregate(const Trace& trace) {
    MetricsReport rep;
    if (trace.empty()) return rep;

    std::map<std::int64_t, double> app_arrival;
    std::map<std::int64_t, double> spawn_time;
    std::map<std::int64_t, double> start_time;
    std::map<std::string, std::vector<double>> by_type;
    // Execution time runs from first admission to completion.
    std::map<std::string, std::vector<double>> exec_by_type;
    std::vector<double> e2e;
    Series gpu, effective, stalled;
    double tokens = 0.0;
    const double t_first = trace.front().t_ms;
    const double t_last = trace.back().t_ms;

    for (const auto& ev : trace) {
        const auto& k = ev.kind;
        if (k == "app_arrival") {
            app_arrival[ev.app_id] = ev.t_ms;
        } else if (k == "app_done") {
            auto it = app_arrival.find(ev.app_id);
            if (it != app_arrival.end()) e2e.push_back(ev.t_ms - it->second);
        } else if (k == "request_spawn") {
            spawn_time[ev.request_id] = ev.t_ms;
        } else if (k == "admit") {
            start_time.try_emplace(ev.request_id, ev.t_ms);
        } else if (k == "request_done") {
            auto it = spawn_time.find(ev.request_id);
            if (it != spawn_time.end()) by_type[ev.agent_type].push_back(ev.t_ms - it->second);
            auto st = start_time.find(ev.request_id);
            if (st != start_time.end()) exec_by_type[ev.agent_type].push_back(ev.t_ms - st->second);
            tokens += ev.extra.value("tokens", 0.0);
        } else if (k == "step") {
            const double total = ev.extra.value("total", 0.0);
            gpu.points.push_back({ev.t_ms, ratio_of(ev.extra, "used", total)});
            effective.points.push_back({ev.t_ms, ratio_of(ev.extra, "active", total)});
            stalled.points.push_back({ev.t_ms, ratio_of(ev.extra, "stalled", total)});
        } else if (k == "preemption") {
            ++rep.preemption_count;
        } else if (k == "critical_inversion") {
            ++rep.critical_inversion_count;
        } else if (k == "offload_started") {
            ++rep.offload_count;
        } else if (k == "upload_stall") {
            ++rep.upload_stall_count;
        } else if (k == "truncated") {
            rep.partial = true;
        }
    }

    rep.apps_arrived = app_arrival.size();
    rep.apps_completed = e2e.size();
    if (!e2e.empty()) {
        double sum = 0.0;
        for (double v : e2e) sum += v;
        rep.avg_e2e_latency_ms = sum / static_cast<double>(e2e.size());
        rep.p95_e2e_latency_ms = nearest_rank(e2e, 95.0);
    }
    for (const auto& [type, ds] : by_type) {
        double sum = 0.0;
        for (double d : ds) sum += d;
        rep.per_type_avg_latency_ms[type] = sum / static_cast<double>(ds.size());
    }
    rep.abnormal_agent_count = count_abnormal(exec_by_type);
    rep.mean_gpu_utilization = gpu.time_weighted_mean(t_last);
    rep.mean_effective_utilization = effective.time_weighted_mean(t_last);
    rep.mean_stalled_fraction = stalled.time_weighted_mean(t_last);
    for (const auto& p : stalled.points) rep.peak_stalled_fraction = std::max(rep.peak_stalled_fraction, p.value);
    rep.gpu_utilization_timeline = std::move(gpu.points);
    rep.effective_utilization_timeline = std::move(effective.points);
    rep.makespan_ms = t_last - t_first;
    if (rep.makespan_ms > 0.0) rep.tokens_per_second = tokens / (rep.makespan_ms / 1000.0);
    return rep;
}

std::vector<std::pair<std::string, double>> scalar_metrics(const MetricsReport& r) {
    return {
        {"apps_completed", static_cast<double>(r.apps_completed)},
        {"avg_e2e_latency_ms", r.avg_e2e_latency_ms},
        {"p95_e2e_latency_ms", r.p95_e2e_latency_ms},
        {"mean_gpu_utilization", r.mean_gpu_utilization},
        {"mean_effective_utilization", r.mean_effective_utilization},
        {"mean_stalled_fraction", r.mean_stalled_fraction},
        {"peak_stalled_fraction", r.peak_stalled_fraction},
        {"abnormal_agent_count", static_cast<double>(r.abnormal_agent_count)},
        {"preemption_count", static_cast<double>(r.preemption_count)},
        {"critical_inversion_count", static_cast<double>(r.critical_inversion_count)},
        {"offload_count", static_cast<double>(r.offload_count)},
        {"upload_stall_count", static_cast<double>(r.upload_stall_count)},
        {"tokens_per_second", r.tokens_per_second},
    };
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
    MetricsReport out;
    if (reports.empty()) return out;
    const double n = static_cast<double>(reports.size());
    double completed = 0.0, arrived = 0.0, abnormal = 0.0, preempt = 0.0, inversion = 0.0, offload = 0.0, stalls = 0.0;
    std::map<std::string, std::pair<double, int>> per_type;
    for (const auto& r : reports) {
        out.partial = out.partial || r.partial;
        arrived += static_cast<double>(r.apps_arrived);
        completed += static_cast<double>(r.apps_completed);
        out.avg_e2e_latency_ms += r.avg_e2e_latency_ms / n;
        out.p95_e2e_latency_ms += r.p95_e2e_latency_ms / n;
        out.mean_gpu_utilization += r.mean_gpu_utilization / n;
        out.mean_effective_utilization += r.mean_effective_utilization / n;
        out.mean_stalled_fraction += r.mean_stalled_fraction / n;
        out.peak_stalled_fraction += r.peak_stalled_fraction / n;
        abnormal += static_cast<double>(r.abnormal_agent_count);
        preempt += static_cast<double>(r.preemption_count);
        inversion += static_cast<double>(r.critical_inversion_count);
        offload += static_cast<double>(r.offload_count);
        stalls += static_cast<double>(r.upload_stall_count);
        out.tokens_per_second += r.tokens_per_second / n;
        out.makespan_ms += r.makespan_ms / n;
        for (const auto& [t, v] : r.per_type_avg_latency_ms) {
            per_type[t].first += v;
            per_type[t].second += 1;
        }
    }
    auto avg = [&](double v) { return static_cast<std::int64_t>(std::llround(v / n)); };
    out.apps_arrived = static_cast<std::size_t>(std::llround(arrived / n));
    out.apps_completed = static_cast<std::size_t>(std::llround(completed / n));
    out.abnormal_agent_count = avg(abnormal);
    out.preemption_count = avg(preempt);
    out.critical_inversion_count = avg(inversion);
    out.offload_count = avg(offload);
    out.upload_stall_count = avg(stalls);
    for (const auto& [t, sv] : per_type) out.per_type_avg_latency_ms[t] = sv.first / sv.second;
    return out;
}

ComparisonTable compare(std::span<const ComparisonInput> inputs) {
    if (inputs.size() < 2) throw std::invalid_argument("compare needs at least two reports");
    const auto& base = inputs.front();
    for (const auto& in : inputs) {
        if (in.scenario_key != base.scenario_key) {
            throw std::invalid_argument("cannot compare mismatched scenarios '" + base.scenario_key + "' and '" +
                                        in.scenario_key + "'");
        }
    }
    ComparisonTable table;
    const auto base_metrics = scalar_metrics(base.report);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        const auto cand_metrics = scalar_metrics(inputs[i].report);
        for (std::size_t m = 0; m < base_metrics.size(); ++m) {
            ComparisonRow row;
            row.scenario_key = base.scenario_key;
            row.metric = base_metrics[m].first;
            row.baseline = base.label;
            row.candidate = inputs[i].label;
            row.baseline_value = base_metrics[m].second;
            row.candidate_value = cand_metrics[m].second;
            row.delta = row.candidate_value - row.baseline_value;
            if (row.baseline_value == 0.0) {
                row.ratio = row.candidate_value == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
            } else {
                row.ratio = row.candidate_value / row.baseline_value;
            }
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return fmt::format("{:.6f}", v);
}

void write_comparison_csv(std::ostream& out, const ComparisonTable& table) {
    out << "scenario,metric,baseline,candidate,baseline_value,candidate_value,delta,ratio\n";
    for (const auto& r : table.rows) {
        out << r.scenario_key << ',' << r.metric << ',' << r.baseline << ',' << r.candidate << ','
            << format_number(r.baseline_value) << ',' << format_number(r.candidate_value) << ','
            << format_number(r.delta) << ',' << format_number(r.ratio) << '\n';
    }
}

void write_comparison_text(std::ostream& out, const ComparisonTable& table) {
    std::string last_key;
    for (const auto& r : table.rows) {
        const auto key = r.scenario_key + " " + r.candidate + " vs " + r.baseline;
        if (key != last_key) {
            out << "== " << key << '\n';
            last_key = key;
        }
        out << fmt::format("  {:<28} {:>14} {:>14} {:>12} {:>9}\n", r.metric, format_number(r.baseline_value),
                           format_number(r.candidate_value), format_number(r.delta), format_number(r.ratio));
    }
}

}  // namespace tokencake
