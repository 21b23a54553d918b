// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/time_scheduler.hpp"

#include <algorithm>
#include <stdexcept>

namespace tokencake {

FcPredictionTable::FcPredictionTable(double alpha, double beta) : alpha_(alpha), beta_(beta) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(beta > 0.0) || beta > 1.0) throw std::invalid_argument("beta must lie in (0, 1]");
}

void FcPredictionTable::set_cold_start(const std::string& agent_type, const std::string& label, double estimate_ms) {
    table_[{agent_type, label}].cold_start_estimate = estimate_ms;
}

double FcPredictionTable::predict(const std::string& agent_type, const std::string& label,
                                  std::optional<double> hint_ms) const {
    const auto* s = stats(agent_type, label);
    if (s == nullptr || s->observations == 0) {
        if (hint_ms) return *hint_ms;
        return s ? s->cold_start_estimate : 0.0;
    }
    if (hint_ms) return alpha_ * *hint_ms + (1.0 - alpha_) * s->t_hist;
    return s->t_hist;
}

void FcPredictionTable::record(const std::string& agent_type, const std::string& label, double observed_ms) {
    if (!(observed_ms > 0.0)) throw std::invalid_argument("observed duration must be positive");
    auto& s = table_[{agent_type, label}];
    s.t_hist = s.observations == 0 ? observed_ms : beta_ * observed_ms + (1.0 - beta_) * s.t_hist;
    ++s.observations;
}

const FcStats* FcPredictionTable::stats(const std::string& agent_type, const std::string& label) const {
    auto it = table_.find({agent_type, label});
    return it == table_.end() ? nullptr : &it->second;
}

void ThroughputWindow::push(double tokens, double duration_ms) {
    samples_.emplace_back(tokens, duration_ms);
    if (samples_.size() > capacity_) samples_.pop_front();
}

double ThroughputWindow::tokens_per_s() const {
    double tokens = 0.0;
    double duration = 0.0;
    for (const auto& [t, d] : samples_) {
        tokens += t;
        duration += d;
    }
    return duration > 0.0 ? 1000.0 * tokens / duration : 0.0;
}

std::optional<WaitingDemand> find_best_fit(std::span<const WaitingDemand> queue, double capacity) {
    std::optional<WaitingDemand> best;
    for (const auto& w : queue) {
        if (w.tokens <= capacity && (!best || w.tokens > best->tokens)) best = w;
    }
    return best;
}

OffloadDecision should_offload(const OffloadCandidate& request, std::span<const WaitingDemand> queue,
                               const TransferCostModel& model, const FcPredictionTable& table,
                               double throughput_tok_per_s) {
    OffloadDecision d;
    d.request_id = request.id;
    d.t_transfer = model.transfer_time(request.n_blocks, TransferDirection::Roundtrip);
    d.t_fc = table.predict(request.agent_type, request.label, request.hint_ms);
    if (d.t_fc <= d.t_transfer) return d;  // stall too short

    d.t_window = d.t_fc - d.t_transfer;
    d.n_capacity = d.t_window * throughput_tok_per_s / 1000.0;
    if (auto match = find_best_fit(queue, d.n_capacity)) {
        d.decision = OffloadChoice::Offload;
        d.matched_waiting_request = match->id;
    }
    return d;
}

UploadPlan plan_predictive_upload(const OffloadDecision& decision, double call_start_ms, double offload_done_ms,
                                  const TransferCostModel& model, BlockCount n_blocks,
                                  const UploadPlanParams& params) {
    UploadPlan plan;
    plan.request_id = decision.request_id;
    plan.predicted_finish = call_start_ms + decision.t_fc;
    const double upload_ms = model.transfer_time(n_blocks, TransferDirection::Upload);
    plan.upload_start = plan.predicted_finish - upload_ms;

    if (plan.upload_start < offload_done_ms) {
        plan.immediate = true;
        plan.gradual = false;
        plan.upload_start = offload_done_ms;
        plan.reservation_start = plan.reservation_deadline = offload_done_ms;
        return plan;
    }
    plan.reservation_deadline = std::max(offload_done_ms, plan.upload_start - params.reservation_lead_ms);
    plan.reservation_start = std::max(offload_done_ms, plan.reservation_deadline -
                                                           params.reservation_cycles * params.reservation_tick_ms);
    plan.gradual = plan.reservation_deadline > plan.reservation_start;
    return plan;
}

CallFinishOutcome handle_call_finish(FcPredictionTable& table, const StalledCall& call, double observed_ms) {
    if (!call.stalled) throw std::logic_error("call_finish for a request that is not stalled on a call");
    CallFinishOutcome out;
    out.predicted_ms = table.predict(call.agent_type, call.label, call.hint_ms);
    out.early = observed_ms < out.predicted_ms;
    table.record(call.agent_type, call.label, observed_ms);
    switch (call.location) {
        case CacheLocation::Device: out.action = FinishAction::ResumeNow; break;
        case CacheLocation::Host: out.action = FinishAction::ImmediateUpload; break;
        case CacheLocation::Offloading: out.action = FinishAction::UploadAfterOffload; break;
        case CacheLocation::Uploading: out.action = FinishAction::ResumeAtUploadDone; break;
        case CacheLocation::Dropped: out.action = FinishAction::Recompute; break;
    }
    return out;
}

}  // namespace tokencake
