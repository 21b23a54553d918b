// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "tokencake/metrics.hpp"
#include "tokencake/scenario_config.hpp"
#include "tokencake/sweep.hpp"
#include "tokencake/trace.hpp"

namespace tokencake {
namespace {

namespace fs = std::filesystem;

TEST(Abnormal, AllEqualIsZero) {
    EXPECT_EQ(count_abnormal({{"a", std::vector<double>(10, 500.0)}}), 0);
}

TEST(Abnormal, OutlierCounted) {
    std::vector<double> d(9, 100.0);
    d.push_back(1000.0);
    EXPECT_GE(count_abnormal({{"a", d}}), 1);
    // Threshold is strict and per type.
    EXPECT_EQ(count_abnormal({{"a", {100.0, 100.0, 100.0}}, {"b", {1.0, 2.0}}}), 0);
    // Mean of {1, 1, 4} is 2; 4 > 3 is abnormal; a value at exactly 1.5x is not.
    EXPECT_EQ(count_abnormal({{"a", {1.0, 1.0, 4.0}}}), 1);
    EXPECT_EQ(count_abnormal({{"a", {1.0, 2.0, 3.0}}}), 0);
}

TEST(NearestRank, Percentiles) {
    EXPECT_DOUBLE_EQ(nearest_rank({}, 95.0), 0.0);
    std::vector<double> v;
    for (int i = 100; i >= 1; --i) v.push_back(i);
    EXPECT_DOUBLE_EQ(nearest_rank(v, 95.0), 95.0);
    EXPECT_DOUBLE_EQ(nearest_rank(v, 100.0), 100.0);
    EXPECT_DOUBLE_EQ(nearest_rank({3.0, 1.0, 2.0}, 50.0), 2.0);
}

TraceEvent ev(double t, std::string kind, std::int64_t req = -1, std::int64_t app = -1, std::string type = "") {
    TraceEvent e;
    e.t_ms = t;
    e.kind = std::move(kind);
    e.request_id = req;
    e.app_id = app;
    e.agent_type = std::move(type);
    return e;
}

TraceEvent step(double t, std::int64_t used, std::int64_t active, std::int64_t stalled, std::int64_t total) {
    auto e = ev(t, "step");
    e.extra["total"] = total;
    e.extra["used"] = used;
    e.extra["active"] = active;
    e.extra["stalled"] = stalled;
    return e;
}

TEST(Aggregate, HandBuiltTrace) {
    Trace t;
    t.push_back(ev(0, "app_arrival", -1, 0));
    t.push_back(ev(0, "request_spawn", 1, 0, "x"));
    t.push_back(ev(0, "admit", 1, 0, "x"));
    t.push_back(step(0, 50, 50, 0, 100));
    t.push_back(step(10, 80, 40, 40, 100));
    auto done = ev(30, "request_done", 1, 0, "x");
    done.extra["tokens"] = 30;
    t.push_back(done);
    t.push_back(ev(30, "app_done", -1, 0));
    t.push_back(ev(30, "preemption", 1, 0, "x"));
    t.push_back(ev(30, "critical_inversion", 1, 0, "x"));
    t.push_back(step(40, 0, 0, 0, 100));
    const auto r = aggregate(t);
    EXPECT_EQ(r.apps_arrived, 1u);
    EXPECT_EQ(r.apps_completed, 1u);
    EXPECT_DOUBLE_EQ(r.avg_e2e_latency_ms, 30.0);
    EXPECT_DOUBLE_EQ(r.per_type_avg_latency_ms.at("x"), 30.0);
    // Time weighted over [0, 40]: 0.5 for 10 ms, 0.8 for 30 ms.
    EXPECT_NEAR(r.mean_gpu_utilization, (0.5 * 10 + 0.8 * 30) / 40.0, 1e-12);
    EXPECT_NEAR(r.mean_effective_utilization, (0.5 * 10 + 0.4 * 30) / 40.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.peak_stalled_fraction, 0.4);
    EXPECT_EQ(r.preemption_count, 1);
    EXPECT_EQ(r.critical_inversion_count, 1);
    EXPECT_DOUBLE_EQ(r.tokens_per_second, 30.0 / 0.04);
    EXPECT_FALSE(r.partial);
    for (const auto& p : r.gpu_utilization_timeline) {
        EXPECT_GE(p.value, 0.0);
        EXPECT_LE(p.value, 1.0);
    }
}

TEST(Aggregate, EmptyAndTruncated) {
    const auto r = aggregate({});
    EXPECT_EQ(r.apps_completed, 0u);
    Trace t{ev(0, "app_arrival", -1, 0), ev(5, "truncated")};
    EXPECT_TRUE(aggregate(t).partial);
}

MetricsReport sample_report(double latency) {
    MetricsReport r;
    r.avg_e2e_latency_ms = latency;
    r.mean_effective_utilization = 0.4;
    return r;
}

TEST(Compare, IdenticalReportsRatioOne) {
    std::vector<ComparisonInput> in{{"a", "k", sample_report(10)}, {"b", "k", sample_report(10)}};
    const auto table = compare(in);
    ASSERT_FALSE(table.rows.empty());
    for (const auto& row : table.rows) EXPECT_DOUBLE_EQ(row.ratio, 1.0) << row.metric;
    bool util = false;
    for (const auto& row : table.rows) util = util || row.metric == "mean_effective_utilization";
    EXPECT_TRUE(util);
}

TEST(Compare, Errors) {
    std::vector<ComparisonInput> one{{"a", "k", sample_report(10)}};
    EXPECT_THROW(compare(one), std::invalid_argument);
    std::vector<ComparisonInput> mismatch{{"a", "k1", sample_report(10)}, {"b", "k2", sample_report(5)}};
    EXPECT_THROW(compare(mismatch), std::invalid_argument);
    std::vector<ComparisonInput> ok{{"a", "k", sample_report(10)}, {"b", "k", sample_report(5)}};
    const auto t = compare(ok);
    for (const auto& row : t.rows) {
        if (row.metric == "avg_e2e_latency_ms") {
            EXPECT_DOUBLE_EQ(row.ratio, 0.5);
            EXPECT_DOUBLE_EQ(row.delta, -5.0);
        }
    }
}

TEST(Trace, JsonlRoundTrip) {
    Trace t;
    auto e = ev(1.25, "admit", 3, 1, "coder");
    e.blocks = 12;
    e.extra["resident"] = false;
    e.extra["waited_ms"] = 0.1;
    e.extra["list"] = Json::array({"a", "b"});
    t.push_back(e);
    t.push_back(ev(2.0 / 3.0, "step"));
    std::ostringstream out;
    write_trace(out, t);
    std::istringstream in(out.str());
    const auto back = read_trace(in);
    std::ostringstream again;
    write_trace(again, back);
    EXPECT_EQ(out.str(), again.str());
    EXPECT_EQ(trace_hash(back), trace_hash(t));
    EXPECT_THROW(parse_jsonl("{not json"), std::invalid_argument);
}

TEST(Trace, SimulatedRoundTrip) {
    Scenario s;
    s.qps = 0.5;
    s.duration_s = 20;
    EngineConfig c;
    const auto res = run_simulation(s, c, build_code_writer());
    std::ostringstream out;
    write_trace(out, res.trace);
    std::istringstream in(out.str());
    const auto back = read_trace(in);
    std::ostringstream again;
    write_trace(again, back);
    EXPECT_EQ(out.str(), again.str());
    // Aggregation is a pure function of the trace.
    std::ostringstream r1, r2;
    write_report_row_csv(r1, "x", {}, aggregate(res.trace));
    write_report_row_csv(r2, "x", {}, aggregate(back));
    EXPECT_EQ(r1.str(), r2.str());
}

TEST(Scenario, ParseAndRoundTrip) {
    const auto doc = nlohmann::json::parse(R"({
        "name": "t", "app": "deep_research", "qps": 0.3, "duration_s": 12, "seed": 4,
        "policy": "time-only",
        "engine": {"device_blocks": 999},
        "lengths": {"planner": {"prompt": {"kind": "constant", "value": 9}}},
        "tool_latency": {"db": {"kind": "exponential", "mean": 50}},
        "qps_grid": [0.1, 0.2], "seeds": [1, 2], "policies": ["retain", "evict"]
    })");
    const auto f = parse_scenario(doc);
    EXPECT_EQ(f.name, "t");
    EXPECT_EQ(f.graph, "deep_research");
    EXPECT_EQ(f.engine.device_blocks, 999);
    EXPECT_EQ(f.policy, PolicyKind::TimeOnly);
    EXPECT_EQ(f.scenario.lengths.at("planner").prompt, Distribution::constant(9));
    EXPECT_EQ(f.scenario.tool_latency.at(ToolClass::Db), Distribution::exponential(50));
    EXPECT_EQ(sweep_grid(f).size(), 8u);
    const auto again = parse_scenario(scenario_to_json(f));
    EXPECT_EQ(scenario_to_json(again), scenario_to_json(f));
}

TEST(Scenario, Errors) {
    auto bad = [](const char* text) { return parse_scenario(nlohmann::json::parse(text)); };
    EXPECT_THROW(bad(R"({"qps": "fast"})"), ScenarioError);
    EXPECT_THROW(bad(R"({"bogus": 1})"), ScenarioError);
    EXPECT_THROW(bad(R"({"policy": "vllm"})"), ScenarioError);
    EXPECT_THROW(bad(R"({"engine": {"device_blocks": -4}})"), ScenarioError);
    EXPECT_THROW(bad(R"({"engine": {"step_base_ms": 0}})"), ScenarioError);
    EXPECT_THROW(bad(R"({"qps_grid": []})"), ScenarioError);
    EXPECT_THROW(bad(R"({"tool_latency": {"teleport": {"kind": "constant", "value": 1}}})"), ScenarioError);
    EXPECT_THROW(bad(R"([1, 2])"), ScenarioError);
    try {
        load_scenario_file("/no/such/scenario.json");
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_NE(std::string(e.what()).find("/no/such/scenario.json"), std::string::npos);
    }
}

TEST(Scenario, ReferenceFilesLoad) {
    for (auto name : {"code_writer_ref.json", "deep_research_fc.json"}) {
        const auto f = load_scenario_file(std::string(TOKENCAKE_SOURCE_DIR) + "/data/scenarios/" + name);
        EXPECT_NO_THROW(f.engine.validate()) << name;
        EXPECT_NO_THROW(load_app_graph(f.graph)) << name;
    }
}

ScenarioFile small_file() {
    ScenarioFile f;
    f.name = "small";
    f.scenario.duration_s = 20.0;
    f.qps_grid = {0.05, 0.25, 0.5, 1.0};
    f.seeds = {1};
    f.policies = {PolicyKind::Tokencake, PolicyKind::Retain, PolicyKind::Evict};
    return f;
}

TEST(Sweep, GridOrderAndJobsInvariance) {
    const auto f = small_file();
    const auto grid = sweep_grid(f);
    ASSERT_EQ(grid.size(), 12u);
    EXPECT_EQ(grid[0].qps, 0.05);
    EXPECT_EQ(grid[1].policy, PolicyKind::Retain);
    const auto g = build_code_writer();
    const auto serial = run_sweep(f, g, grid, 1);
    const auto parallel = run_sweep(f, g, grid, 4);
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].trace_hash, parallel[i].trace_hash);
        EXPECT_EQ(serial[i].spec.policy, grid[i].policy);
    }
    const auto table = compare_sweep(f, serial);
    EXPECT_FALSE(table.rows.empty());
    for (const auto& row : table.rows) EXPECT_EQ(row.baseline, "tokencake");
}

TEST(Sweep, PlotsOneFilePerFigure) {
    auto f = small_file();
    f.qps_grid = {0.5};
    const auto outcomes = run_sweep(f, build_code_writer(), sweep_grid(f), 2);
    const auto dir = fs::temp_directory_path() / "tokencake_plot_test";
    fs::remove_all(dir);
    const auto files = write_plots(dir.string(), f, outcomes);
    EXPECT_EQ(files.size(), 3u);
    for (const auto& name : files) EXPECT_GT(fs::file_size(dir / name), 0u) << name;
    EXPECT_TRUE(fs::exists(dir / "plots.gp"));
    fs::remove_all(dir);
}

}  // namespace
}  // namespace tokencake
