// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <spdlog/fmt/fmt.h>

namespace tokencake {

RunOutcome run_one(const ScenarioFile& file, const ValidatedGraph& graph, const RunSpec& spec, bool keep_trace) {
    Scenario sc = file.scenario;
    sc.qps = spec.qps;
    sc.seed = spec.seed;
    auto result = run_simulation(sc, engine_for(file, spec.policy), graph);
    RunOutcome out;
    out.spec = spec;
    out.report = aggregate(result.trace);
    out.trace_hash = trace_hash(result.trace);
    out.truncated = result.truncated;
    if (keep_trace) out.trace = std::move(result.trace);
    return out;
}

std::vector<RunSpec> sweep_grid(const ScenarioFile& file) {
    std::vector<RunSpec> grid;
    for (double q : file.qps_grid) {
        for (auto p : file.policies) {
            for (auto s : file.seeds) grid.push_back({q, p, s});
        }
    }
    return grid;
}

std::vector<RunOutcome> run_sweep(const ScenarioFile& file, const ValidatedGraph& graph,
                                  const std::vector<RunSpec>& grid, int jobs, bool keep_traces) {
    std::vector<RunOutcome> out(grid.size());
    const auto workers = static_cast<std::size_t>(std::clamp<int>(jobs, 1, std::max<int>(1, static_cast<int>(grid.size()))));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= grid.size()) return;
            try {
                out[i] = run_one(file, graph, grid[i], keep_traces);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = grid.size();
                return;
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::string scenario_key(const ScenarioFile& file, double qps) { return file.name + "@qps=" + format_number(qps); }

void write_report_header_csv(std::ostream& out) {
    out << "scenario,qps,policy,seed,partial,apps_arrived";
    for (const auto& [name, _] : scalar_metrics(MetricsReport{})) out << ',' << name;
    out << '\n';
}

void write_report_row_csv(std::ostream& out, const std::string& scenario, const RunSpec& spec,
                          const MetricsReport& report) {
    out << scenario << ',' << format_number(spec.qps) << ',' << to_string(spec.policy) << ',' << spec.seed << ','
        << (report.partial ? 1 : 0) << ',' << report.apps_arrived;
    for (const auto& [_, v] : scalar_metrics(report)) out << ',' << format_number(v);
    out << '\n';
}

void write_report_jsonl(std::ostream& out, const std::string& scenario, const RunSpec& spec,
                        const MetricsReport& report) {
    Json j;
    j["scenario"] = scenario;
    j["qps"] = spec.qps;
    j["policy"] = std::string(to_string(spec.policy));
    j["seed"] = spec.seed;
    j["partial"] = report.partial;
    j["apps_arrived"] = report.apps_arrived;
    for (const auto& [name, v] : scalar_metrics(report)) j[name] = v;
    Json per_type = Json::object();
    for (const auto& [type, v] : report.per_type_avg_latency_ms) per_type[type] = v;
    j["per_type_avg_latency_ms"] = per_type;
    out << j.dump() << '\n';
}

namespace {

MetricsReport seed_mean(const std::vector<RunOutcome>& outcomes, double qps, PolicyKind policy) {
    std::vector<MetricsReport> reps;
    for (const auto& o : outcomes) {
        if (o.spec.qps == qps && o.spec.policy == policy) reps.push_back(o.report);
    }
    return mean_report(reps);
}

std::vector<double> qps_points(const std::vector<RunOutcome>& outcomes) {
    std::vector<double> q;
    for (const auto& o : outcomes) {
        if (std::find(q.begin(), q.end(), o.spec.qps) == q.end()) q.push_back(o.spec.qps);
    }
    return q;
}

std::vector<PolicyKind> policies_of(const std::vector<RunOutcome>& outcomes) {
    std::vector<PolicyKind> p;
    for (const auto& o : outcomes) {
        if (std::find(p.begin(), p.end(), o.spec.policy) == p.end()) p.push_back(o.spec.policy);
    }
    return p;
}

}  // namespace

ComparisonTable compare_sweep(const ScenarioFile& file, const std::vector<RunOutcome>& outcomes) {
    ComparisonTable table;
    const auto policies = policies_of(outcomes);
    if (policies.size() < 2) return table;
    for (double q : qps_points(outcomes)) {
        std::vector<ComparisonInput> inputs;
        for (auto p : policies) inputs.push_back({std::string(to_string(p)), scenario_key(file, q), seed_mean(outcomes, q, p)});
        auto t = compare(inputs);
        for (auto& row : t.rows) table.rows.push_back(std::move(row));
    }
    return table;
}

std::vector<std::string> write_plots(const std::string& dir, const ScenarioFile& file,
                                     const std::vector<RunOutcome>& outcomes) {
    std::filesystem::create_directories(dir);
    const auto policies = policies_of(outcomes);
    const auto qps = qps_points(outcomes);

    {
        std::ofstream f(dir + "/latency_vs_qps.dat");
        f << "# qps";
        for (auto p : policies) f << ' ' << to_string(p);
        f << '\n';
        for (double q : qps) {
            f << format_number(q);
            for (auto p : policies) f << ' ' << format_number(seed_mean(outcomes, q, p).avg_e2e_latency_ms);
            f << '\n';
        }
    }
    {
        // Timelines of the first seed at the highest load, one block per policy.
        std::ofstream f(dir + "/utilization_timeline.dat");
        const double q = qps.empty() ? 0.0 : *std::max_element(qps.begin(), qps.end());
        for (auto p : policies) {
            auto it = std::find_if(outcomes.begin(), outcomes.end(),
                                   [&](const RunOutcome& o) { return o.spec.qps == q && o.spec.policy == p; });
            f << "# policy " << to_string(p) << ": t_s gpu_util effective_util\n";
            if (it != outcomes.end()) {
                const auto& gpu = it->report.gpu_utilization_timeline;
                const auto& eff = it->report.effective_utilization_timeline;
                for (std::size_t i = 0; i < gpu.size(); ++i) {
                    f << format_number(gpu[i].t_ms / 1000.0) << ' ' << format_number(gpu[i].value) << ' '
                      << format_number(i < eff.size() ? eff[i].value : 0.0) << '\n';
                }
            }
            f << "\n\n";
        }
    }
    {
        std::ofstream f(dir + "/abnormal_agents.dat");
        f << "# qps";
        for (auto p : policies) f << ' ' << to_string(p);
        f << '\n';
        for (double q : qps) {
            f << format_number(q);
            for (auto p : policies) f << ' ' << seed_mean(outcomes, q, p).abnormal_agent_count;
            f << '\n';
        }
    }
    {
        std::ofstream f(dir + "/plots.gp");
        f << "# gnuplot script for " << file.name << "\nset terminal pngcairo size 900,600\n";
        f << "set output 'latency_vs_qps.png'\nset xlabel 'QPS'\nset ylabel 'mean E2E latency (ms)'\nplot ";
        for (std::size_t i = 0; i < policies.size(); ++i) {
            f << (i ? ", " : "") << "'latency_vs_qps.dat' using 1:" << i + 2 << " with linespoints title '"
              << to_string(policies[i]) << "'";
        }
        f << "\nset output 'utilization_timeline.png'\nset xlabel 'time (s)'\nset ylabel 'fraction of blocks'\nplot ";
        for (std::size_t i = 0; i < policies.size(); ++i) {
            f << (i ? ", " : "") << "'utilization_timeline.dat' index " << i << " using 1:3 with lines title '"
              << to_string(policies[i]) << " effective'";
        }
        f << "\nset output 'abnormal_agents.png'\nset style data histograms\nset xlabel 'QPS'\n"
             "set ylabel 'abnormal agents'\nplot ";
        for (std::size_t i = 0; i < policies.size(); ++i) {
            f << (i ? ", " : "") << "'abnormal_agents.dat' using " << i + 2 << ":xtic(1) title '"
              << to_string(policies[i]) << "'";
        }
        f << '\n';
    }
    return {"latency_vs_qps.dat", "utilization_timeline.dat", "abnormal_agents.dat"};
}

}  // namespace tokencake
