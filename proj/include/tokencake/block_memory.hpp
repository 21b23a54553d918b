// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tokencake {

using RequestId = std::uint64_t;
using BlockCount = std::int64_t;

inline constexpr BlockCount kCalibrationBlocks = 4096;

enum class TransferDirection { Offload, Upload, Roundtrip };

/// Linear device<->host transfer and recomputation cost, calibrated per 4096 blocks.
struct TransferCostModel {
    double roundtrip_ms_per_4096_blocks = 60.0;
    /// Share of the round trip spent on the offload leg; the rest is the upload leg.
    double offload_fraction = 0.5;
    double recompute_ms_per_4096_blocks = 9000.0;

    bool valid() const;
    double transfer_time(BlockCount n_blocks, TransferDirection direction) const;
    double recompute_time(BlockCount n_blocks) const;
};

/// Per agent type slice of the reserved pool. `reserved_blocks` is what the
/// type currently holds against its reservation (claimed plus set aside);
/// `target_blocks` is the size most recently requested by the partition plan.
/// A shrunken target is reached lazily as claimed blocks are released.
struct ReservationEntry {
    std::string agent_type;
    BlockCount reserved_blocks = 0;
    BlockCount claimed_blocks = 0;
    BlockCount target_blocks = 0;

    BlockCount unclaimed() const { return reserved_blocks - claimed_blocks; }
};

struct AllocationResult {
    bool ok = false;
    BlockCount from_reservation = 0;
    BlockCount from_shared = 0;

    explicit operator bool() const { return ok; }
};

struct TransferTicket {
    RequestId request = 0;
    TransferDirection direction = TransferDirection::Offload;
    BlockCount blocks = 0;
    double start_ms = 0.0;
    double done_ms = 0.0;
    /// Offload: host blocks that had to be newly acquired instead of reused from the buffer.
    BlockCount fresh_host_blocks = 0;
    /// Upload: destination blocks that were already staged by a gradual reservation.
    BlockCount from_staged = 0;
};

/// Device blocks claimed for an upload in chunks over several scheduling ticks.
struct GradualReservation {
    RequestId request = 0;
    BlockCount total = 0;
    std::vector<BlockCount> chunks;
    std::vector<double> tick_times;
    double deadline = 0.0;
    std::size_t next_tick = 0;
    BlockCount claimed = 0;
    BlockCount shortfall = 0;

    bool done_ticking() const { return next_tick >= chunks.size(); }
    bool ready() const { return claimed >= total; }
    double readiness() const { return total == 0 ? 1.0 : static_cast<double>(claimed) / static_cast<double>(total); }
};

/// Splits n into `cycles` near-equal chunks, larger chunks first (10 over 3 -> 4, 3, 3).
std::vector<BlockCount> split_chunks(BlockCount n, int cycles);

struct UploadResult {
    std::optional<TransferTicket> ticket;
    bool stalled() const { return !ticket.has_value(); }
};

struct PoolOptions {
    /// Keep released host blocks in an internal free list instead of handing them back.
    bool host_buffering = true;
};

/// Block-granular accounting of the device and host KV-cache pools.
///
/// Device identity, at every operation boundary:
///   device_free + sum(used) + sum(unclaimed reservations) + pending_free + sum(staged) == device_total
/// where `staged` holds blocks claimed by gradual reservations ahead of an upload.
class BlockPool {
public:
    BlockPool(BlockCount device_blocks, BlockCount host_blocks, PoolOptions options = {});

    BlockCount device_total() const { return device_total_; }
    /// Shared free pool; excludes blocks set aside for reservations.
    BlockCount device_free() const { return device_free_; }
    BlockCount pending_free() const { return pending_free_; }
    BlockCount device_used(RequestId id) const;
    BlockCount device_used_total() const { return used_total_; }
    BlockCount staged(RequestId id) const;
    BlockCount staged_total() const { return staged_total_; }
    BlockCount unclaimed_reserved_total() const;
    /// Blocks a request of this type could obtain right now.
    BlockCount available_for(const std::string& agent_type) const;
    /// Blocks allocated on the device in any form (used, pending, staged).
    BlockCount device_occupied() const { return used_total_ + pending_free_ + staged_total_; }

    BlockCount host_total() const { return host_total_; }
    BlockCount host_free_list() const { return host_free_list_; }
    BlockCount host_in_use(RequestId id) const;
    BlockCount host_in_use_total() const { return host_used_total_; }
    BlockCount host_unallocated() const { return host_total_ - host_used_total_ - host_free_list_; }

    const std::map<std::string, ReservationEntry>& reservations() const { return reservations_; }
    const ReservationEntry* reservation(const std::string& agent_type) const;
    std::optional<std::string> agent_type_of(RequestId id) const;
    /// Device blocks currently in use by requests of each type.
    const std::map<std::string, BlockCount>& usage_by_type() const { return used_by_type_; }

    /// Draws from the type's unclaimed reservation first, then from the shared pool.
    /// On failure nothing changes. Throws std::invalid_argument when n_blocks < 1.
    AllocationResult allocate(RequestId id, const std::string& agent_type, BlockCount n_blocks);
    /// Returns blocks to the type's reservation up to its target, the rest to the shared pool.
    /// Throws std::invalid_argument when n_blocks < 1 or exceeds what the request holds.
    void free(RequestId id, BlockCount n_blocks);
    /// Releases every device block of the request; returns the count.
    BlockCount free_all(RequestId id);

    /// Sets reservation targets; types absent from `targets` drop to zero.
    void set_reservation_targets(const std::map<std::string, BlockCount>& targets);

    /// Device -> host. Host blocks come from the free list first. Returns nullopt
    /// (pool unchanged) when the request does not hold the blocks or host capacity is short.
    std::optional<TransferTicket> offload(RequestId id, BlockCount n_blocks, double now, const TransferCostModel& model);
    void complete_offload(const TransferTicket& ticket);

    GradualReservation begin_gradual_reservation(RequestId id, BlockCount n_blocks, double start, double deadline,
                                                 int cycles) const;
    /// Claims the next chunk plus any carried shortfall from the shared pool.
    BlockCount reservation_tick(GradualReservation& reservation);
    /// Returns staged blocks of the request to the shared pool.
    BlockCount release_staged(RequestId id);

    /// Host -> device. Uses staged blocks first, then the type's reservation and
    /// the shared pool. A stall leaves the pool unchanged and is counted.
    UploadResult upload(RequestId id, BlockCount n_blocks, double now, const TransferCostModel& model);
    void complete_upload(const TransferTicket& ticket);

    std::int64_t host_acquisitions() const { return host_acquisitions_; }
    BlockCount fresh_host_blocks() const { return fresh_host_blocks_; }
    std::int64_t upload_stalls() const { return upload_stalls_; }

    /// Describes the first broken accounting invariant, if any.
    std::optional<std::string> check_invariants() const;

private:
    void release_to_type(const std::string& agent_type, BlockCount n);
    void top_up_reservations();
    void add_used(RequestId id, BlockCount n);
    void remove_used(RequestId id, BlockCount n);

    BlockCount device_total_;
    BlockCount device_free_;
    BlockCount pending_free_ = 0;
    BlockCount used_total_ = 0;
    BlockCount staged_total_ = 0;
    std::map<RequestId, BlockCount> used_;
    std::map<RequestId, BlockCount> staged_;
    std::map<RequestId, std::string> type_of_;
    std::map<std::string, BlockCount> used_by_type_;
    std::map<std::string, ReservationEntry> reservations_;

    BlockCount host_total_;
    BlockCount host_free_list_ = 0;
    BlockCount host_used_total_ = 0;
    std::map<RequestId, BlockCount> host_used_;

    PoolOptions options_;
    std::int64_t host_acquisitions_ = 0;
    BlockCount fresh_host_blocks_ = 0;
    std::int64_t upload_stalls_ = 0;
};

}  // namespace tokencake
