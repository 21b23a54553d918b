// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "tokencake/block_memory.hpp"

namespace tokencake {

struct FcStats {
    double t_hist = 0.0;
    std::int64_t observations = 0;
    double cold_start_estimate = 0.0;
};

/// Function-call duration forecaster keyed by (agent type, call label).
///
/// Before any observation it answers with the developer hint, or the
/// cold-start estimate when there is no hint. Afterwards it blends the hint
/// with an exponentially weighted history: alpha * hint + (1 - alpha) * t_hist.
class FcPredictionTable {
public:
    explicit FcPredictionTable(double alpha = 0.5, double beta = 0.5);

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }

    void set_cold_start(const std::string& agent_type, const std::string& label, double estimate_ms);
    double predict(const std::string& agent_type, const std::string& label, std::optional<double> hint_ms) const;
    /// Throws std::invalid_argument for a non-positive observation.
    void record(const std::string& agent_type, const std::string& label, double observed_ms);
    const FcStats* stats(const std::string& agent_type, const std::string& label) const;

private:
    using Key = std::pair<std::string, std::string>;
    double alpha_;
    double beta_;
    std::map<Key, FcStats> table_;
};

inline double predict_fc_duration(const FcPredictionTable& table, const std::string& agent_type,
                                  const std::string& label, std::optional<double> hint_ms) {
    return table.predict(agent_type, label, hint_ms);
}

inline void record_fc_observation(FcPredictionTable& table, const std::string& agent_type, const std::string& label,
                                  double observed_ms) {
    table.record(agent_type, label, observed_ms);
}

/// Decode throughput over the last few engine steps.
class ThroughputWindow {
public:
    explicit ThroughputWindow(std::size_t steps = 10) : capacity_(steps) {}
    void push(double tokens, double duration_ms);
    double tokens_per_s() const;

private:
    std::size_t capacity_;
    std::deque<std::pair<double, double>> samples_;
};

/// A waiting request as seen by the offload policy.
struct WaitingDemand {
    RequestId id = 0;
    /// Prompt plus expected output tokens.
    double tokens = 0.0;
};

/// The stalled request a call_start event refers to.
struct OffloadCandidate {
    RequestId id = 0;
    std::string agent_type;
    std::string label;
    std::optional<double> hint_ms;
    BlockCount n_blocks = 0;
};

enum class OffloadChoice { Retain, Offload };

struct OffloadDecision {
    RequestId request_id = 0;
    OffloadChoice decision = OffloadChoice::Retain;
    double t_fc = 0.0;
    double t_transfer = 0.0;
    double t_window = 0.0;
    /// Tokens the engine could process during the window.
    double n_capacity = 0.0;
    std::optional<RequestId> matched_waiting_request;

    bool offload() const { return decision == OffloadChoice::Offload; }
};

/// Largest waiting demand that fits in `capacity` tokens; earliest in queue order on ties.
std::optional<WaitingDemand> find_best_fit(std::span<const WaitingDemand> queue, double capacity);

/// Cost/benefit offload decision taken when a request starts a function call.
/// Retains when the predicted call is no longer than the round-trip transfer,
/// otherwise offloads only if some waiting request fits in the freed window.
OffloadDecision should_offload(const OffloadCandidate& request, std::span<const WaitingDemand> queue,
                               const TransferCostModel& model, const FcPredictionTable& table,
                               double throughput_tok_per_s);

struct UploadPlanParams {
    double reservation_lead_ms = 100.0;
    int reservation_cycles = 4;
    /// Spacing of reservation ticks ahead of the deadline.
    double reservation_tick_ms = 25.0;
};

struct UploadPlan {
    RequestId request_id = 0;
    double predicted_finish = 0.0;
    double upload_start = 0.0;
    double reservation_start = 0.0;
    double reservation_deadline = 0.0;
    /// True when there is no room to hide the upload; upload as soon as the offload lands.
    bool immediate = false;
    /// False when the reservation window collapsed and blocks are taken all at once.
    bool gradual = true;
};

/// Places the upload so it completes at the predicted call finish, with the
/// gradual reservation ready `reservation_lead_ms` before the upload starts.
UploadPlan plan_predictive_upload(const OffloadDecision& decision, double call_start_ms, double offload_done_ms,
                                  const TransferCostModel& model, BlockCount n_blocks,
                                  const UploadPlanParams& params = {});

enum class CacheLocation { Device, Offloading, Host, Uploading, Dropped };

enum class FinishAction {
    ResumeNow,
    ImmediateUpload,
    UploadAfterOffload,
    ResumeAtUploadDone,
    Recompute,
};

struct CallFinishOutcome {
    FinishAction action = FinishAction::ResumeNow;
    double predicted_ms = 0.0;
    bool early = false;
};

struct StalledCall {
    std::string agent_type;
    std::string label;
    std::optional<double> hint_ms;
    CacheLocation location = CacheLocation::Device;
    bool stalled = true;
};

/// Records the observed duration and picks how the request resumes.
/// Throws std::logic_error when the request is not stalled on a call.
CallFinishOutcome handle_call_finish(FcPredictionTable& table, const StalledCall& call, double observed_ms);

}  // namespace tokencake
