// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "tokencake/block_memory.hpp"
#include "tokencake/transfer_bench.hpp"

namespace tokencake {
namespace {

constexpr BlockCount kHost = 1'000'000;

// Checks the device identity from public counters only.
void expect_conserved(const BlockPool& pool) {
    EXPECT_EQ(pool.device_free() + pool.device_used_total() + pool.unclaimed_reserved_total() + pool.pending_free() +
                  pool.staged_total(),
              pool.device_total());
    EXPECT_LE(pool.host_in_use_total() + pool.host_free_list(), pool.host_total());
    for (const auto& [type, e] : pool.reservations()) {
        EXPECT_GE(e.claimed_blocks, 0);
        EXPECT_LE(e.claimed_blocks, e.reserved_blocks) << type;
    }
    EXPECT_EQ(pool.check_invariants(), std::nullopt);
}

TEST(Allocate, SimpleDecrement) {
    BlockPool pool(10, kHost);
    EXPECT_TRUE(pool.allocate(1, "a", 4));
    EXPECT_EQ(pool.device_free(), 6);
    EXPECT_EQ(pool.device_used(1), 4);
    expect_conserved(pool);
}

TEST(Allocate, NonCriticalCannotTouchReservation) {
    BlockPool pool(8, kHost);
    pool.set_reservation_targets({{"crit", 8}});
    EXPECT_EQ(pool.device_free(), 0);
    EXPECT_EQ(pool.available_for("other"), 0);
    const auto r = pool.allocate(1, "other", 1);
    EXPECT_FALSE(r);
    EXPECT_EQ(pool.device_used(1), 0);
    expect_conserved(pool);
}

TEST(Allocate, CriticalDrawsFromReservation) {
    BlockPool pool(8, kHost);
    pool.set_reservation_targets({{"crit", 8}});
    const auto r = pool.allocate(1, "crit", 5);
    ASSERT_TRUE(r);
    EXPECT_EQ(r.from_reservation, 5);
    EXPECT_EQ(r.from_shared, 0);
    EXPECT_EQ(pool.reservation("crit")->claimed_blocks, 5);
    expect_conserved(pool);
}

TEST(Allocate, ZeroBlocksThrows) {
    BlockPool pool(8, kHost);
    EXPECT_THROW(pool.allocate(1, "a", 0), std::invalid_argument);
}

TEST(Free, FullRelease) {
    BlockPool pool(10, kHost);
    pool.allocate(1, "a", 4);
    pool.free(1, 4);
    EXPECT_EQ(pool.device_used(1), 0);
    EXPECT_EQ(pool.device_free(), 10);
}

TEST(Free, ReturnsToReservationFirst) {
    BlockPool pool(8, kHost);
    pool.set_reservation_targets({{"crit", 8}});
    pool.allocate(1, "crit", 5);
    pool.free(1, 3);
    EXPECT_EQ(pool.reservation("crit")->claimed_blocks, 2);
    EXPECT_EQ(pool.reservation("crit")->reserved_blocks, 8);
    expect_conserved(pool);
}

TEST(Free, Errors) {
    BlockPool pool(8, kHost);
    pool.allocate(1, "a", 2);
    EXPECT_THROW(pool.free(1, 0), std::invalid_argument);
    EXPECT_THROW(pool.free(1, 3), std::invalid_argument);
}

TEST(CostModel, Calibration) {
    const TransferCostModel m;
    EXPECT_DOUBLE_EQ(m.transfer_time(4096, TransferDirection::Roundtrip), 60.0);
    EXPECT_DOUBLE_EQ(m.transfer_time(0, TransferDirection::Roundtrip), 0.0);
    EXPECT_DOUBLE_EQ(m.transfer_time(2048, TransferDirection::Roundtrip), 30.0);
    EXPECT_DOUBLE_EQ(m.transfer_time(4096, TransferDirection::Offload), 30.0);
    EXPECT_DOUBLE_EQ(m.transfer_time(4096, TransferDirection::Upload), 30.0);
    EXPECT_DOUBLE_EQ(m.recompute_time(4096), 9000.0);
    EXPECT_DOUBLE_EQ(m.recompute_time(0), 0.0);
    EXPECT_DOUBLE_EQ(m.recompute_time(1024), 2250.0);
}

TEST(CostModel, MonotoneAndLinear) {
    const TransferCostModel m;
    for (BlockCount n = 0; n < 5000; n += 37) {
        EXPECT_LE(m.transfer_time(n, TransferDirection::Roundtrip), m.transfer_time(n + 1, TransferDirection::Roundtrip));
        EXPECT_LE(m.recompute_time(n), m.recompute_time(n + 1));
        EXPECT_NEAR(m.transfer_time(2 * n, TransferDirection::Roundtrip),
                    2 * m.transfer_time(n, TransferDirection::Roundtrip), 1e-9);
        EXPECT_NEAR(m.recompute_time(n) + m.recompute_time(7), m.recompute_time(n + 7), 1e-9);
    }
}

TEST(Offload, BufferFirst) {
    BlockPool pool(200, kHost);
    pool.allocate(1, "a", 100);
    auto t = pool.offload(1, 100, 0.0, {});
    ASSERT_TRUE(t);
    pool.complete_offload(*t);
    auto u = pool.upload(1, 100, 10.0, {});
    ASSERT_FALSE(u.stalled());
    pool.complete_upload(*u.ticket);
    ASSERT_EQ(pool.host_free_list(), 100);

    auto t2 = pool.offload(1, 60, 20.0, {});
    ASSERT_TRUE(t2);
    EXPECT_EQ(pool.host_free_list(), 40);
    EXPECT_EQ(pool.host_in_use(1), 60);
    EXPECT_EQ(t2->fresh_host_blocks, 0);
    expect_conserved(pool);
}

TEST(Offload, PendingFreeUntilComplete) {
    BlockPool pool(4096, kHost);
    pool.allocate(1, "a", 4096);
    auto t = pool.offload(1, 4096, 100.0, {});
    ASSERT_TRUE(t);
    EXPECT_DOUBLE_EQ(t->done_ms - t->start_ms, 30.0);
    EXPECT_EQ(pool.pending_free(), 4096);
    EXPECT_EQ(pool.device_free(), 0);
    expect_conserved(pool);
    pool.complete_offload(*t);
    EXPECT_EQ(pool.pending_free(), 0);
    EXPECT_EQ(pool.device_free(), 4096);
}

TEST(Offload, RefusedWhenHostFull) {
    BlockPool pool(100, 10);
    pool.allocate(1, "a", 20);
    EXPECT_FALSE(pool.offload(1, 20, 0.0, {}));
    EXPECT_EQ(pool.device_used(1), 20);
    EXPECT_EQ(pool.host_in_use(1), 0);
    expect_conserved(pool);
}

TEST(Upload, StagedReservationAvoidsStall) {
    BlockPool pool(128, kHost);
    pool.allocate(1, "a", 64);
    auto t = pool.offload(1, 64, 0.0, {});
    pool.complete_offload(*t);
    auto gr = pool.begin_gradual_reservation(1, 64, 0.0, 100.0, 4);
    while (!gr.done_ticking()) pool.reservation_tick(gr);
    ASSERT_TRUE(gr.ready());
    // Fill the rest of the device so only staged blocks remain.
    pool.allocate(2, "b", pool.device_free());
    const auto stalls = pool.upload_stalls();
    auto u = pool.upload(1, 64, 200.0, {});
    ASSERT_FALSE(u.stalled());
    EXPECT_EQ(u.ticket->from_staged, 64);
    EXPECT_EQ(pool.upload_stalls(), stalls);
    expect_conserved(pool);
}

TEST(Upload, StallsWithNothingFree) {
    BlockPool pool(64, kHost);
    pool.allocate(1, "a", 32);
    auto t = pool.offload(1, 32, 0.0, {});
    pool.complete_offload(*t);
    pool.allocate(2, "b", 64);
    auto u = pool.upload(1, 32, 10.0, {});
    EXPECT_TRUE(u.stalled());
    EXPECT_EQ(pool.upload_stalls(), 1);
    EXPECT_EQ(pool.host_in_use(1), 32);
    expect_conserved(pool);
}

TEST(Upload, TicketDuration) {
    BlockPool pool(8192, kHost);
    pool.allocate(1, "a", 4096);
    auto t = pool.offload(1, 4096, 0.0, {});
    pool.complete_offload(*t);
    auto u = pool.upload(1, 4096, 50.0, {});
    ASSERT_FALSE(u.stalled());
    EXPECT_DOUBLE_EQ(u.ticket->done_ms, 80.0);
}

TEST(Gradual, ChunkSplits) {
    EXPECT_EQ(split_chunks(100, 4), (std::vector<BlockCount>{25, 25, 25, 25}));
    EXPECT_EQ(split_chunks(10, 3), (std::vector<BlockCount>{4, 3, 3}));
}

TEST(Gradual, TotalShortfall) {
    BlockPool pool(16, kHost);
    pool.allocate(1, "a", 16);
    auto gr = pool.begin_gradual_reservation(9, 8, 0.0, 40.0, 4);
    while (!gr.done_ticking()) pool.reservation_tick(gr);
    EXPECT_DOUBLE_EQ(gr.readiness(), 0.0);
    EXPECT_EQ(gr.shortfall, 8);
    EXPECT_THROW(pool.begin_gradual_reservation(9, 8, 10.0, 10.0, 4), std::invalid_argument);
}

TEST(Gradual, ShortfallCarries) {
    BlockPool pool(20, kHost);
    pool.allocate(1, "a", 18);
    auto gr = pool.begin_gradual_reservation(9, 8, 0.0, 40.0, 2);
    EXPECT_EQ(pool.reservation_tick(gr), 2);
    EXPECT_EQ(gr.shortfall, 2);
    pool.free(1, 10);
    EXPECT_EQ(pool.reservation_tick(gr), 6);
    EXPECT_TRUE(gr.ready());
    expect_conserved(pool);
}

TEST(Reservations, ShrinkIsLazy) {
    BlockPool pool(100, kHost);
    pool.set_reservation_targets({{"crit", 40}});
    pool.allocate(1, "crit", 30);
    pool.set_reservation_targets({{"crit", 10}});
    const auto* e = pool.reservation("crit");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->claimed_blocks, 30);
    EXPECT_EQ(e->reserved_blocks, 30);
    pool.free(1, 25);
    EXPECT_EQ(pool.reservation("crit")->reserved_blocks, 10);
    expect_conserved(pool);
}

// Random operation sequences over every mutating call of the pool.
TEST(BlockPoolProperty, ConservationUnderRandomOperations) {
    const std::vector<std::string> types{"a", "b", "c"};
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        std::mt19937_64 rng(seed);
        BlockPool pool(512, 600, {seed % 2 == 0});
        const TransferCostModel m;
        std::map<RequestId, TransferTicket> in_flight;
        std::map<RequestId, GradualReservation> gradual;
        auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
        for (int step = 0; step < 2000; ++step) {
            const RequestId id = 1 + pick(24);
            const auto& type = types[id % types.size()];
            switch (pick(9)) {
                case 0:
                case 1: {
                    if (in_flight.count(id) || pool.host_in_use(id) > 0) break;
                    const BlockCount before_used = pool.device_used(id);
                    const BlockCount before_free = pool.device_free();
                    const BlockCount n = 1 + static_cast<BlockCount>(pick(40));
                    const auto r = pool.allocate(id, type, n);
                    if (r) {
                        EXPECT_EQ(pool.device_used(id), before_used + n);
                        EXPECT_EQ(r.from_reservation + r.from_shared, n);
                    } else {
                        EXPECT_EQ(pool.device_used(id), before_used);
                        EXPECT_EQ(pool.device_free(), before_free);
                    }
                    break;
                }
                case 2: {
                    const auto held = pool.device_used(id);
                    if (held > 0 && !in_flight.count(id)) pool.free(id, 1 + static_cast<BlockCount>(pick(held)));
                    break;
                }
                case 3: {
                    const auto held = pool.device_used(id);
                    if (held == 0 || in_flight.count(id) || pool.host_in_use(id) > 0) break;
                    if (auto t = pool.offload(id, held, step, m)) in_flight[id] = *t;
                    break;
                }
                case 4: {
                    if (in_flight.empty()) break;
                    auto it = in_flight.begin();
                    std::advance(it, pick(in_flight.size()));
                    if (it->second.direction == TransferDirection::Offload) {
                        pool.complete_offload(it->second);
                    } else {
                        pool.complete_upload(it->second);
                    }
                    in_flight.erase(it);
                    break;
                }
                case 5: {
                    const auto host = pool.host_in_use(id);
                    if (host == 0 || in_flight.count(id)) break;
                    auto u = pool.upload(id, host, step, m);
                    gradual.erase(id);
                    if (!u.stalled()) in_flight[id] = *u.ticket;
                    break;
                }
                case 6: {
                    std::map<std::string, BlockCount> targets;
                    for (const auto& t : types) {
                        if (pick(2)) targets[t] = static_cast<BlockCount>(pick(120));
                    }
                    pool.set_reservation_targets(targets);
                    break;
                }
                case 7: {
                    const auto host = pool.host_in_use(id);
                    if (host == 0 || in_flight.count(id)) break;
                    auto [it, fresh] = gradual.try_emplace(id, pool.begin_gradual_reservation(id, host, step, step + 10.0, 3));
                    pool.reservation_tick(it->second);
                    break;
                }
                case 8: {
                    pool.release_staged(id);
                    gradual.erase(id);
                    break;
                }
            }
            expect_conserved(pool);
            if (HasFailure()) return;
        }
    }
}

TEST(HostBuffer, ReuseAfterWarmup) {
    const auto on = run_host_buffer_bench(true, 8);
    ASSERT_EQ(on.acquisitions_per_cycle.size(), 8u);
    EXPECT_GE(on.acquisitions_per_cycle[0], 1);
    for (std::size_t i = 1; i < on.acquisitions_per_cycle.size(); ++i) EXPECT_EQ(on.acquisitions_per_cycle[i], 0);

    const auto off = run_host_buffer_bench(false, 8);
    for (auto a : off.acquisitions_per_cycle) EXPECT_GE(a, 1);
}

}  // namespace
}  // namespace tokencake
