// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tokencake/agent_graph.hpp"
#include "tokencake/block_memory.hpp"
#include "tokencake/space_scheduler.hpp"
#include "tokencake/time_scheduler.hpp"
#include "tokencake/trace.hpp"
#include "tokencake/workload.hpp"

namespace tokencake {

/// Thrown when an invariant check fails during a checked run.
class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RequestState { Waiting, Prefill, Decode, StalledFC, Offloaded, Uploading, Evicted, Done };

std::string_view to_string(RequestState state);
/// Whether `from -> to` is an edge of the request lifecycle.
bool is_allowed_transition(RequestState from, RequestState to);

enum class PolicyKind { Tokencake, Retain, Evict, SpaceOnly, TimeOnly };

std::string_view to_string(PolicyKind policy);
std::optional<PolicyKind> parse_policy(std::string_view name);

struct PolicyFlags {
    bool time_scheduler = false;
    bool space_scheduler = false;
    /// Free a stalled request's cache at call start and recompute on resume.
    bool evict_stalled = false;

    static PolicyFlags of(PolicyKind policy);
    bool consistent() const { return !(evict_stalled && time_scheduler); }
};

struct EngineConfig {
    double step_base_ms = 5.0;
    double step_per_seq_ms = 1.0;
    /// Prompt tokens per ms; the default matches 4096 blocks of 16 tokens in 9000 ms.
    double prefill_tokens_per_ms = 4096.0 * 16.0 / 9000.0;
    int max_batch_size = 256;
    int block_size_tokens = 16;
    BlockCount device_blocks = 4096;
    double host_memory_gb = 100.0;
    /// Bytes of one KV block; 16 tokens of a 48-layer, 8-head, 128-dim fp16 model.
    double block_bytes = 3145728.0;
    /// Fraction of device blocks admission keeps free for decode growth.
    double admission_watermark = 0.01;
    TransferCostModel cost;
    bool host_buffering = true;

    double alpha = 0.5;
    double beta = 0.5;
    UploadPlanParams upload;
    std::size_t throughput_window_steps = 10;

    PartitionParams partition;
    double w_static = 50.0;
    /// Waiting time is divided by this before entering the dynamic priority
    /// term; 1 feeds it milliseconds, 1000 feeds it seconds.
    double priority_wait_unit_ms = 1.0;

    PolicyFlags policy = PolicyFlags::of(PolicyKind::Tokencake);

    double horizon_ms = 3'600'000.0;
    /// Re-check pool, lifecycle and upload rules after every event.
    bool check_invariants = false;
    /// Progress lines on stderr every this many simulated ms; 0 disables them.
    double progress_interval_ms = 0.0;

    BlockCount host_blocks() const;
    double step_time(std::size_t batch_size) const { return step_base_ms + step_per_seq_ms * static_cast<double>(batch_size); }
    /// Throws std::invalid_argument naming the first bad field.
    void validate() const;
};

enum class EventKind { TransferDone, CallFinish, ReservationTick, Arrival, CallStart, PartitionUpdate, StepComplete };

/// Lower rank runs first among events with the same timestamp.
int event_rank(EventKind kind);

struct Event {
    double t_ms = 0.0;
    EventKind kind = EventKind::Arrival;
    std::uint64_t seq = 0;
    /// Request id, or app id for arrivals.
    std::uint64_t subject = 0;
    /// Reservation tick index; kUploadDue marks the predictive upload start.
    int aux = 0;
};

inline constexpr int kUploadDue = -1;

/// Min-heap on (t_ms, kind rank, seq).
class EventQueue {
public:
    void push(double t_ms, EventKind kind, std::uint64_t subject, int aux = 0);
    Event pop();
    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    const Event& top() const { return heap_.top(); }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const;
    };
    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    std::uint64_t next_seq_ = 0;
};

struct Request {
    RequestId id = 0;
    std::uint64_t app_id = 0;
    NodeIndex node = 0;
    std::string agent_type;
    double arrival_ms = 0.0;
    std::int64_t prompt_tokens = 0;
    std::vector<std::int64_t> segment_outputs;
    std::int64_t generated = 0;
    std::size_t segment = 0;
    std::int64_t segment_generated = 0;
    RequestState state = RequestState::Waiting;
    CacheLocation cache = CacheLocation::Dropped;
    bool needs_recompute = false;

    bool call_active = false;
    std::size_t call_index = 0;
    double call_start_ms = 0.0;
    double call_latency_ms = 0.0;
    bool upload_due = false;
    bool upload_stalled = false;
    std::optional<GradualReservation> gradual;
    std::optional<TransferTicket> transfer;

    std::uint64_t admit_seq = 0;
    double wait_since_ms = 0.0;
    double demand_tokens = 0.0;
    double static_score = 0.0;
    double first_scheduled_ms = -1.0;
    double done_ms = -1.0;

    std::int64_t output_tokens() const;
    std::int64_t context_tokens() const { return prompt_tokens + generated; }
    BlockCount footprint(int block_size) const;
    bool resident() const { return cache == CacheLocation::Device && !needs_recompute; }
};

struct SimResult {
    Trace trace;
    bool truncated = false;
    double end_ms = 0.0;
    std::uint64_t events_processed = 0;
    std::size_t apps_total = 0;
    std::size_t apps_done = 0;
    std::int64_t host_acquisitions = 0;
};

/// Runs one scenario under one configuration. The trace is a pure function of
/// (scenario, config, graph).
SimResult run_simulation(const Scenario& scenario, const EngineConfig& config, const ValidatedGraph& graph);
/// Same, over an explicit pre-sampled workload.
SimResult run_simulation(const std::vector<AppInstance>& apps, const EngineConfig& config, const ValidatedGraph& graph);

}  // namespace tokencake
