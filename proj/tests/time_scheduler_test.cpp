// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tokencake/time_scheduler.hpp"

namespace tokencake {
namespace {

TEST(Predict, BlendsHintAndHistory) {
    FcPredictionTable t(0.5, 1.0);
    t.record("coder", "read", 4000.0);
    EXPECT_DOUBLE_EQ(t.predict("coder", "read", 2000.0), 3000.0);

    FcPredictionTable u(0.3, 1.0);
    u.record("coder", "read", 2000.0);
    EXPECT_DOUBLE_EQ(u.predict("coder", "read", 1000.0), 1700.0);
    EXPECT_DOUBLE_EQ(u.predict("coder", "read", std::nullopt), 2000.0);
}

TEST(Predict, ColdStart) {
    FcPredictionTable t;
    EXPECT_DOUBLE_EQ(t.predict("coder", "read", 500.0), 500.0);
    t.set_cold_start("coder", "read", 100.0);
    EXPECT_DOUBLE_EQ(t.predict("coder", "read", std::nullopt), 100.0);
    EXPECT_DOUBLE_EQ(t.predict("coder", "read", 750.0), 750.0);
}

TEST(Predict, KeyedByTypeAndLabel) {
    FcPredictionTable t;
    t.record("coder", "read", 100.0);
    EXPECT_EQ(t.stats("coder", "write"), nullptr);
    EXPECT_EQ(t.stats("tester", "read"), nullptr);
    ASSERT_NE(t.stats("coder", "read"), nullptr);
}

TEST(Predict, AlphaBoundariesExact) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(1.0, 1e5);
    for (int i = 0; i < 1000; ++i) {
        const double hint = d(rng), obs = d(rng);
        FcPredictionTable one(1.0, 0.5), zero(0.0, 0.5);
        one.record("a", "l", obs);
        zero.record("a", "l", obs);
        EXPECT_EQ(one.predict("a", "l", hint), hint);
        EXPECT_EQ(zero.predict("a", "l", hint), zero.stats("a", "l")->t_hist);
    }
}

TEST(Record, EwmaSteps) {
    FcPredictionTable t(0.5, 0.5);
    t.record("a", "l", 800.0);
    EXPECT_DOUBLE_EQ(t.stats("a", "l")->t_hist, 800.0);
    t.record("a", "l", 1200.0);
    EXPECT_DOUBLE_EQ(t.stats("a", "l")->t_hist, 1000.0);
    t.record("a", "l", 1000.0);
    EXPECT_DOUBLE_EQ(t.stats("a", "l")->t_hist, 1000.0);
    EXPECT_EQ(t.stats("a", "l")->observations, 3);
}

TEST(Record, RejectsNonPositive) {
    FcPredictionTable t;
    EXPECT_THROW(t.record("a", "l", 0.0), std::invalid_argument);
    EXPECT_THROW(t.record("a", "l", -5.0), std::invalid_argument);
    EXPECT_EQ(t.stats("a", "l"), nullptr);
}

TEST(Record, GeometricConvergence) {
    // Error after k further observations is (1 - beta)^k of the initial error.
    for (double beta : {0.2, 0.5, 0.9}) {
        FcPredictionTable t(0.5, beta);
        t.record("a", "l", 10000.0);
        const double d = 2000.0;
        double expected_err = 10000.0 - d;
        for (int k = 0; k < 20; ++k) {
            t.record("a", "l", d);
            expected_err *= (1.0 - beta);
            EXPECT_NEAR(t.stats("a", "l")->t_hist - d, expected_err, 1e-6);
        }
    }
}

OffloadCandidate candidate(BlockCount blocks, double hint) {
    return {1, "coder", "read", hint, blocks};
}

TEST(ShouldOffload, ShortWindowRetains) {
    FcPredictionTable t;
    std::vector<WaitingDemand> q{{7, 4000.0}, {8, 9000.0}};
    const auto d = should_offload(candidate(4096, 100.0), q, {}, t, 1000.0);
    EXPECT_DOUBLE_EQ(d.t_transfer, 60.0);
    EXPECT_DOUBLE_EQ(d.t_window, 40.0);
    EXPECT_DOUBLE_EQ(d.n_capacity, 40.0);
    EXPECT_FALSE(d.offload());
    EXPECT_FALSE(d.matched_waiting_request);
}

TEST(ShouldOffload, MatchesWaitingRequest) {
    FcPredictionTable t;
    std::vector<WaitingDemand> q{{7, 12000.0}, {8, 8000.0}, {9, 500.0}};
    const auto d = should_offload(candidate(4096, 5000.0), q, {}, t, 2000.0);
    EXPECT_DOUBLE_EQ(d.n_capacity, 9880.0);
    EXPECT_TRUE(d.offload());
    EXPECT_EQ(d.matched_waiting_request, 8u);
    EXPECT_GT(d.t_window, 0.0);
}

TEST(ShouldOffload, EmptyQueueRetains) {
    FcPredictionTable t;
    const auto d = should_offload(candidate(4096, 5000.0), {}, {}, t, 2000.0);
    EXPECT_FALSE(d.offload());
}

TEST(ShouldOffload, StallShorterThanTransferRetains) {
    FcPredictionTable t;
    std::vector<WaitingDemand> q{{7, 1.0}};
    EXPECT_FALSE(should_offload(candidate(4096, 60.0), q, {}, t, 1e9).offload());
    EXPECT_FALSE(should_offload(candidate(4096, 10.0), q, {}, t, 1e9).offload());
}

TEST(BestFit, LargestFittingEarliestOnTie) {
    std::vector<WaitingDemand> q{{1, 50.0}, {2, 80.0}, {3, 80.0}, {4, 120.0}};
    EXPECT_EQ(find_best_fit(q, 100.0)->id, 2u);
    EXPECT_EQ(find_best_fit(q, 80.0)->id, 2u);
    EXPECT_FALSE(find_best_fit(q, 49.0));
}

// Property: retain whenever the call is no longer than the round trip, and any
// match fits the capacity.
TEST(ShouldOffloadProperty, RetainAndBeneficiary) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 5000; ++i) {
        const BlockCount blocks = 1 + static_cast<BlockCount>(rng() % 8192);
        const double hint = 1.0 + u(rng) * 400.0;
        std::vector<WaitingDemand> q;
        for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k) q.push_back({static_cast<RequestId>(k), 1.0 + u(rng) * 3000.0});
        FcPredictionTable t;
        const auto d = should_offload(candidate(blocks, hint), q, {}, t, u(rng) * 20000.0);
        if (d.t_fc <= d.t_transfer) EXPECT_FALSE(d.offload());
        if (d.offload()) {
            ASSERT_TRUE(d.matched_waiting_request);
            EXPECT_GT(d.t_window, 0.0);
            EXPECT_LE(q.at(*d.matched_waiting_request).tokens, d.n_capacity);
        }
    }
}

TEST(Throughput, SlidingWindow) {
    ThroughputWindow w(2);
    EXPECT_DOUBLE_EQ(w.tokens_per_s(), 0.0);
    w.push(10, 10.0);
    EXPECT_DOUBLE_EQ(w.tokens_per_s(), 1000.0);
    w.push(30, 10.0);
    w.push(30, 10.0);
    EXPECT_DOUBLE_EQ(w.tokens_per_s(), 3000.0);
}

TEST(UploadPlan, Arithmetic) {
    OffloadDecision d;
    d.request_id = 4;
    d.t_fc = 5000.0;
    const TransferCostModel m;
    const auto plan = plan_predictive_upload(d, 0.0, 30.0, m, 4096, {100.0, 4, 25.0});
    EXPECT_DOUBLE_EQ(plan.predicted_finish, 5000.0);
    EXPECT_DOUBLE_EQ(plan.upload_start, 4970.0);
    EXPECT_DOUBLE_EQ(plan.reservation_deadline, 4870.0);
    EXPECT_DOUBLE_EQ(plan.reservation_start, 4770.0);
    EXPECT_FALSE(plan.immediate);
    EXPECT_TRUE(plan.gradual);
}

TEST(UploadPlan, DegenerateWindowIsImmediate) {
    OffloadDecision d;
    d.t_fc = 50.0;
    const auto plan = plan_predictive_upload(d, 0.0, 30.0, {}, 4096);
    EXPECT_TRUE(plan.immediate);
    EXPECT_GE(plan.upload_start, 30.0);
}

TEST(UploadPlan, NeverBeforeOffloadCompletes) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        OffloadDecision d;
        d.t_fc = u(rng) * 3000.0;
        const BlockCount n = 1 + static_cast<BlockCount>(rng() % 8192);
        const TransferCostModel m;
        const double start = u(rng) * 1000.0;
        const double off_done = start + m.transfer_time(n, TransferDirection::Offload);
        const auto p = plan_predictive_upload(d, start, off_done, m, n);
        EXPECT_GE(p.upload_start, off_done);
        EXPECT_LE(p.reservation_deadline, p.upload_start);
        EXPECT_LE(p.reservation_start, p.reservation_deadline);
        EXPECT_GE(p.reservation_start, off_done);
    }
}

TEST(CallFinish, Actions) {
    FcPredictionTable t;
    StalledCall c{"coder", "read", 1000.0, CacheLocation::Host, true};
    auto out = handle_call_finish(t, c, 400.0);
    EXPECT_EQ(out.action, FinishAction::ImmediateUpload);
    EXPECT_TRUE(out.early);
    EXPECT_DOUBLE_EQ(out.predicted_ms, 1000.0);
    EXPECT_EQ(t.stats("coder", "read")->observations, 1);

    c.location = CacheLocation::Device;
    EXPECT_EQ(handle_call_finish(t, c, 5000.0).action, FinishAction::ResumeNow);
    c.location = CacheLocation::Uploading;
    EXPECT_EQ(handle_call_finish(t, c, 500.0).action, FinishAction::ResumeAtUploadDone);
    c.location = CacheLocation::Offloading;
    EXPECT_EQ(handle_call_finish(t, c, 500.0).action, FinishAction::UploadAfterOffload);
    c.location = CacheLocation::Dropped;
    EXPECT_EQ(handle_call_finish(t, c, 500.0).action, FinishAction::Recompute);

    c.stalled = false;
    EXPECT_THROW(handle_call_finish(t, c, 500.0), std::logic_error);
}

}  // namespace
}  // namespace tokencake
