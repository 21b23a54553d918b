// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace {

namespace fs = std::filesystem;

struct Result {
    int code = -1;
    std::string output;
};

Result sh(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(TOKENCAKE_SIM_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("tokencake_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        scenario_ = dir_ / "small.json";
        std::ofstream(scenario_) << R"({"name": "small", "app": "code_writer", "qps": 0.5, "duration_s": 15,
            "qps_grid": [0.05, 0.25, 0.5, 1.0], "seeds": [1], "policies": ["tokencake", "retain", "evict"]})";
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path dir_;
    fs::path scenario_;
};

TEST_F(Cli, MissingScenarioExitsTwo) {
    const auto r = sh("run --scenario /no/such/file.json --out " + (dir_ / "o").string(), dir_ / "log");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("/no/such/file.json"), std::string::npos) << r.output;
}

TEST_F(Cli, MalformedScenarioExitsTwo) {
    std::ofstream(dir_ / "bad.json") << "{ \"qps\": ";
    const auto r = sh("run --scenario " + (dir_ / "bad.json").string(), dir_ / "log");
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, RunWritesTraceAndReport) {
    const auto out = dir_ / "run";
    const auto r = sh("run --scenario " + scenario_.string() + " --policy retain --seed 3 --out " + out.string(),
                      dir_ / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(out / "trace.jsonl"));
    EXPECT_EQ(count_lines(out / "report.csv"), 2);

    // report reproduces the same row from the saved trace.
    const auto rep = sh("report " + (out / "trace.jsonl").string() + " --out " + (dir_ / "rep").string(), dir_ / "log2");
    ASSERT_EQ(rep.code, 0) << rep.output;
    const auto rep2 = sh("report " + (out / "trace.jsonl").string() + " --out " + (dir_ / "rep2").string(), dir_ / "log3");
    std::ifstream a(dir_ / "rep" / "report.csv"), b(dir_ / "rep2" / "report.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_FALSE(sa.str().empty());
}

TEST_F(Cli, SweepTwelveRows) {
    const auto out = dir_ / "sweep";
    const auto r = sh("sweep --scenario " + scenario_.string() + " --jobs 3 --out " + out.string(), dir_ / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(count_lines(out / "report.csv"), 13);  // header + 12 rows
    EXPECT_TRUE(fs::exists(out / "compare.csv"));

    const auto j = sh("sweep --scenario " + scenario_.string() + " --format jsonl --out " + (dir_ / "j").string(),
                      dir_ / "log2");
    ASSERT_EQ(j.code, 0) << j.output;
    EXPECT_EQ(count_lines(dir_ / "j" / "report.jsonl"), 12);
}

TEST_F(Cli, PlotEmitsDataFiles) {
    const auto out = dir_ / "plot";
    std::ofstream(dir_ / "tiny.json") << R"({"app": "code_writer", "duration_s": 10, "qps_grid": [0.5], "seeds": [1],
        "policies": ["tokencake", "retain"]})";
    const auto r = sh("plot --scenario " + (dir_ / "tiny.json").string() + " --out " + out.string(), dir_ / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    for (auto f : {"latency_vs_qps.dat", "utilization_timeline.dat", "abnormal_agents.dat", "plots.gp"}) {
        EXPECT_TRUE(fs::exists(out / "plots" / f)) << f;
    }
}

TEST_F(Cli, BadFlagsRejected) {
    EXPECT_NE(sh("run --scenario " + scenario_.string() + " --policy vllm", dir_ / "log").code, 0);
    EXPECT_NE(sh("frobnicate", dir_ / "log").code, 0);
    EXPECT_NE(sh("", dir_ / "log").code, 0);
}

}  // namespace
