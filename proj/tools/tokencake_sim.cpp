// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: run, sweep, report, plot.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tokencake/metrics.hpp"
#include "tokencake/scenario_config.hpp"
#include "tokencake/sweep.hpp"

namespace fs = std::filesystem;
using namespace tokencake;

namespace {

constexpr int kExitConfig = 2;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("tokencake");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("TOKENCAKE_SIM_LOG")) {
        const std::string v(lvl);
        if (v == "error") spdlog::set_level(spdlog::level::err);
        else if (v == "info") spdlog::set_level(spdlog::level::info);
        else if (v == "debug") spdlog::set_level(spdlog::level::debug);
        else spdlog::warn("ignoring TOKENCAKE_SIM_LOG={}; expected error, info or debug", v);
    }
}

struct Common {
    std::string scenario;
    std::string out = "out";
    std::string format = "csv";
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    return f;
}

void write_reports(const fs::path& dir, const std::string& format, const std::string& scenario,
                   const std::vector<RunOutcome>& outcomes) {
    if (format == "jsonl") {
        auto f = open_out(dir / "report.jsonl");
        for (const auto& o : outcomes) write_report_jsonl(f, scenario, o.spec, o.report);
    } else {
        auto f = open_out(dir / "report.csv");
        write_report_header_csv(f);
        for (const auto& o : outcomes) write_report_row_csv(f, scenario, o.spec, o.report);
    }
}

void print_summary(const RunOutcome& o) {
    const auto& r = o.report;
    std::cout << "policy=" << to_string(o.spec.policy) << " qps=" << format_number(o.spec.qps)
              << " seed=" << o.spec.seed << (r.partial ? " (partial)" : "") << '\n'
              << "  apps completed       " << r.apps_completed << '/' << r.apps_arrived << '\n'
              << "  avg e2e latency ms   " << format_number(r.avg_e2e_latency_ms) << '\n'
              << "  p95 e2e latency ms   " << format_number(r.p95_e2e_latency_ms) << '\n'
              << "  gpu utilization      " << format_number(r.mean_gpu_utilization) << '\n'
              << "  effective util.      " << format_number(r.mean_effective_utilization) << '\n'
              << "  peak stalled frac.   " << format_number(r.peak_stalled_fraction) << '\n'
              << "  preemptions          " << r.preemption_count << '\n'
              << "  critical inversions  " << r.critical_inversion_count << '\n'
              << "  abnormal agents      " << r.abnormal_agent_count << '\n'
              << "  offloads             " << r.offload_count << '\n'
              << "  upload stalls        " << r.upload_stall_count << '\n'
              << "  trace hash           " << std::hex << o.trace_hash << std::dec << '\n';
}

std::vector<RunSpec> grid_from(const ScenarioFile& file, const std::vector<double>& qps,
                               const std::vector<std::string>& policies, const std::vector<std::uint64_t>& seeds) {
    ScenarioFile f = file;
    if (!qps.empty()) f.qps_grid = qps;
    if (!seeds.empty()) f.seeds = seeds;
    if (!policies.empty()) {
        f.policies.clear();
        for (const auto& p : policies) {
            auto k = parse_policy(p);
            if (!k) throw ScenarioError("unknown policy '" + p + "'");
            f.policies.push_back(*k);
        }
    }
    return sweep_grid(f);
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Discrete-event simulator of agentic LLM serving with KV-cache scheduling"};
    app.require_subcommand(1);

    const std::vector<std::string> policy_names{"tokencake", "retain", "evict", "space-only", "time-only"};
    const std::vector<std::string> formats{"csv", "jsonl"};

    Common run_opts;
    std::string run_policy;
    std::uint64_t run_seed = 0;
    double run_qps = -1.0;
    bool run_check = false;
    auto* run = app.add_subcommand("run", "Simulate one scenario under one policy");
    run->add_option("--scenario", run_opts.scenario, "Scenario file (JSON)")->required();
    run->add_option("--policy", run_policy, "Policy")->check(CLI::IsMember(policy_names));
    run->add_option("--seed", run_seed, "Seed (default: the scenario's)");
    run->add_option("--qps", run_qps, "Arrival rate override");
    run->add_option("--out", run_opts.out, "Output directory");
    run->add_option("--format", run_opts.format, "Report format")->check(CLI::IsMember(formats));
    run->add_flag("--check-invariants", run_check, "Verify accounting and lifecycle after every event");

    Common sweep_opts;
    std::vector<double> sweep_qps;
    std::vector<std::string> sweep_policies;
    std::vector<std::uint64_t> sweep_seeds;
    int jobs = 1;
    bool keep_traces = false;
    auto* sweep = app.add_subcommand("sweep", "QPS grid x policy set x seeds");
    sweep->add_option("--scenario", sweep_opts.scenario, "Scenario file (JSON)")->required();
    sweep->add_option("--qps", sweep_qps, "QPS grid (default: the scenario's)");
    sweep->add_option("--policy", sweep_policies, "Policies (default: the scenario's)")
        ->check(CLI::IsMember(policy_names));
    sweep->add_option("--seed", sweep_seeds, "Seeds (default: the scenario's)");
    sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
    sweep->add_option("--out", sweep_opts.out, "Output directory");
    sweep->add_option("--format", sweep_opts.format, "Report format")->check(CLI::IsMember(formats));
    sweep->add_flag("--traces", keep_traces, "Also write one trace per run under traces/");

    std::vector<std::string> report_traces;
    std::string report_out;
    std::string report_format = "csv";
    auto* report = app.add_subcommand("report", "Aggregate saved traces");
    report->add_option("traces", report_traces, "Trace files (JSONL)")->required();
    report->add_option("--out", report_out, "Output directory (default: stdout)");
    report->add_option("--format", report_format, "Report format")->check(CLI::IsMember(formats));

    Common plot_opts;
    int plot_jobs = 1;
    auto* plot = app.add_subcommand("plot", "Run the scenario's sweep and emit plot data files");
    plot->add_option("--scenario", plot_opts.scenario, "Scenario file (JSON)")->required();
    plot->add_option("--jobs", plot_jobs, "Parallel runs")->check(CLI::PositiveNumber);
    plot->add_option("--out", plot_opts.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run) {
            const auto file = load_scenario_file(run_opts.scenario);
            const auto graph = load_app_graph(file.graph);
            RunSpec spec{file.scenario.qps, file.policy, file.scenario.seed};
            if (!run_policy.empty()) spec.policy = *parse_policy(run_policy);
            if (run->count("--seed")) spec.seed = run_seed;
            if (run_qps >= 0.0) spec.qps = run_qps;
            ScenarioFile f = file;
            f.engine.check_invariants = run_check;
            const auto outcome = run_one(f, graph, spec, true);
            fs::create_directories(run_opts.out);
            {
                auto t = open_out(fs::path(run_opts.out) / "trace.jsonl");
                write_trace(t, outcome.trace);
            }
            write_reports(run_opts.out, run_opts.format, file.name, {outcome});
            print_summary(outcome);
            return 0;
        }
        if (*sweep) {
            const auto file = load_scenario_file(sweep_opts.scenario);
            const auto graph = load_app_graph(file.graph);
            const auto grid = grid_from(file, sweep_qps, sweep_policies, sweep_seeds);
            spdlog::info("sweep: {} runs on {} worker(s)", grid.size(), jobs);
            const auto outcomes = run_sweep(file, graph, grid, jobs, keep_traces);
            fs::create_directories(sweep_opts.out);
            write_reports(sweep_opts.out, sweep_opts.format, file.name, outcomes);
            if (keep_traces) {
                fs::create_directories(fs::path(sweep_opts.out) / "traces");
                for (const auto& o : outcomes) {
                    const auto name = std::string(to_string(o.spec.policy)) + "_qps" + format_number(o.spec.qps) +
                                      "_seed" + std::to_string(o.spec.seed) + ".jsonl";
                    auto t = open_out(fs::path(sweep_opts.out) / "traces" / name);
                    write_trace(t, o.trace);
                }
            }
            const auto table = compare_sweep(file, outcomes);
            {
                auto c = open_out(fs::path(sweep_opts.out) / "compare.csv");
                write_comparison_csv(c, table);
            }
            write_comparison_text(std::cout, table);
            std::cout << outcomes.size() << " runs written to " << sweep_opts.out << '\n';
            return 0;
        }
        if (*report) {
            std::vector<RunOutcome> outcomes;
            for (const auto& path : report_traces) {
                RunOutcome o;
                const auto trace = read_trace_file(path);
                o.report = aggregate(trace);
                o.trace_hash = trace_hash(trace);
                outcomes.push_back(std::move(o));
            }
            auto emit = [&](std::ostream& out) {
                if (report_format == "jsonl") {
                    for (std::size_t i = 0; i < outcomes.size(); ++i) {
                        write_report_jsonl(out, report_traces[i], outcomes[i].spec, outcomes[i].report);
                    }
                } else {
                    write_report_header_csv(out);
                    for (std::size_t i = 0; i < outcomes.size(); ++i) {
                        write_report_row_csv(out, report_traces[i], outcomes[i].spec, outcomes[i].report);
                    }
                }
            };
            if (report_out.empty()) {
                emit(std::cout);
            } else {
                fs::create_directories(report_out);
                auto f = open_out(fs::path(report_out) / (report_format == "jsonl" ? "report.jsonl" : "report.csv"));
                emit(f);
            }
            return 0;
        }
        if (*plot) {
            const auto file = load_scenario_file(plot_opts.scenario);
            const auto graph = load_app_graph(file.graph);
            const auto outcomes = run_sweep(file, graph, sweep_grid(file), plot_jobs);
            const auto dir = (fs::path(plot_opts.out) / "plots").string();
            for (const auto& name : write_plots(dir, file, outcomes)) std::cout << dir << '/' << name << '\n';
            return 0;
        }
    } catch (const ScenarioError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const GraphError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
