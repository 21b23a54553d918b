// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/sim_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

namespace tokencake {

std::string_view to_string(RequestState state) {
    switch (state) {
        case RequestState::Waiting: return "waiting";
        case RequestState::Prefill: return "prefill";
        case RequestState::Decode: return "decode";
        case RequestState::StalledFC: return "stalled_fc";
        case RequestState::Offloaded: return "offloaded";
        case RequestState::Uploading: return "uploading";
        case RequestState::Evicted: return "evicted";
        case RequestState::Done: return "done";
    }
    return "?";
}

bool is_allowed_transition(RequestState from, RequestState to) {
    using S = RequestState;
    switch (from) {
        case S::Waiting: return to == S::Prefill || to == S::Decode || to == S::Evicted;
        case S::Prefill: return to == S::Decode;
        case S::Decode: return to == S::StalledFC || to == S::Done || to == S::Evicted;
        case S::StalledFC: return to == S::Offloaded || to == S::Waiting || to == S::Evicted;
        case S::Offloaded: return to == S::Uploading;
        case S::Uploading: return to == S::StalledFC || to == S::Waiting;
        case S::Evicted: return to == S::Waiting;
        case S::Done: return false;
    }
    return false;
}

std::string_view to_string(PolicyKind policy) {
    switch (policy) {
        case PolicyKind::Tokencake: return "tokencake";
        case PolicyKind::Retain: return "retain";
        case PolicyKind::Evict: return "evict";
        case PolicyKind::SpaceOnly: return "space-only";
        case PolicyKind::TimeOnly: return "time-only";
    }
    return "?";
}

std::optional<PolicyKind> parse_policy(std::string_view name) {
    for (auto p : {PolicyKind::Tokencake, PolicyKind::Retain, PolicyKind::Evict, PolicyKind::SpaceOnly,
                   PolicyKind::TimeOnly}) {
        if (to_string(p) == name) return p;
    }
    return std::nullopt;
}

PolicyFlags PolicyFlags::of(PolicyKind policy) {
    switch (policy) {
        case PolicyKind::Tokencake: return {true, true, false};
        case PolicyKind::Retain: return {false, false, false};
        case PolicyKind::Evict: return {false, false, true};
        case PolicyKind::SpaceOnly: return {false, true, false};
        case PolicyKind::TimeOnly: return {true, false, false};
    }
    return {};
}

BlockCount EngineConfig::host_blocks() const {
    return static_cast<BlockCount>(std::floor(host_memory_gb * 1e9 / block_bytes));
}

void EngineConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("engine config: ") + what);
    };
    require(step_base_ms > 0.0, "step_base_ms must be > 0");
    require(step_per_seq_ms >= 0.0, "step_per_seq_ms must be >= 0");
    require(prefill_tokens_per_ms > 0.0, "prefill_tokens_per_ms must be > 0");
    require(max_batch_size > 0, "max_batch_size must be > 0");
    require(block_size_tokens > 0, "block_size_tokens must be > 0");
    require(device_blocks > 0, "device_blocks must be > 0");
    require(host_memory_gb >= 0.0 && block_bytes > 0.0, "host memory must be >= 0 and block_bytes > 0");
    require(admission_watermark >= 0.0 && admission_watermark < 1.0, "admission_watermark must be in [0, 1)");
    require(cost.valid(), "transfer cost model has non-positive rates");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
    require(beta > 0.0 && beta <= 1.0, "beta must be in (0, 1]");
    require(upload.reservation_cycles > 0, "reservation_cycles must be > 0");
    require(upload.reservation_lead_ms >= 0.0 && upload.reservation_tick_ms >= 0.0, "reservation timing must be >= 0");
    require(throughput_window_steps > 0, "throughput_window_steps must be > 0");
    require(partition.update_period_steps > 0, "update_period_steps must be > 0");
    require(w_static > 0.0, "w_static must be > 0");
    require(priority_wait_unit_ms > 0.0, "priority_wait_unit_ms must be > 0");
    require(policy.consistent(), "evict policy cannot be combined with the time scheduler");
    require(horizon_ms > 0.0, "horizon_ms must be > 0");
}

int event_rank(EventKind kind) { return static_cast<int>(kind); }

bool EventQueue::Later::operator()(const Event& a, const Event& b) const {
    if (a.t_ms != b.t_ms) return a.t_ms > b.t_ms;
    if (a.kind != b.kind) return event_rank(a.kind) > event_rank(b.kind);
    return a.seq > b.seq;
}

void EventQueue::push(double t_ms, EventKind kind, std::uint64_t subject, int aux) {
    heap_.push(Event{t_ms, kind, next_seq_++, subject, aux});
}

Event EventQueue::pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
}

std::int64_t Request::output_tokens() const {
    std::int64_t total = 0;
    for (auto n : segment_outputs) total += n;
    return total;
}

BlockCount Request::footprint(int block_size) const {
    return (context_tokens() + block_size - 1) / block_size;
}

namespace {

BlockCount blocks_for(std::int64_t tokens, int block_size) { return (tokens + block_size - 1) / block_size; }

std::string_view to_string(FinishAction a) {
    switch (a) {
        case FinishAction::ResumeNow: return "resume_now";
        case FinishAction::ImmediateUpload: return "immediate_upload";
        case FinishAction::UploadAfterOffload: return "upload_after_offload";
        case FinishAction::ResumeAtUploadDone: return "resume_at_upload_done";
        case FinishAction::Recompute: return "recompute";
    }
    return "?";
}

class Simulator {
public:
    Simulator(const std::vector<AppInstance>& apps, const EngineConfig& cfg, const ValidatedGraph& graph)
        : apps_(apps),
          cfg_(cfg),
          graph_(graph),
          pool_(cfg.device_blocks, cfg.host_blocks(), PoolOptions{cfg.host_buffering}),
          table_(cfg.alpha, cfg.beta),
          tput_(cfg.throughput_window_steps) {
        cfg_.validate();
        plan_.params = cfg.partition;
        for (const auto& node : graph_.nodes()) node_static_.push_back(static_priority(graph_, node.id, cfg_.w_static));
        watermark_blocks_ = static_cast<BlockCount>(std::ceil(cfg_.admission_watermark * cfg_.device_blocks));
        type_scores_ = score_agent_types({}, graph_, cfg_.w_static);
    }

    SimResult run() {
        SimResult result;
        result.apps_total = apps_.size();
        app_state_.resize(apps_.size());
        for (const auto& app : apps_) queue_.push(app.arrival_ms, EventKind::Arrival, app.app_id);

        double next_progress = cfg_.progress_interval_ms;
        while (!queue_.empty()) {
            const Event ev = queue_.pop();
            if (ev.t_ms > cfg_.horizon_ms) {
                now_ = cfg_.horizon_ms;
                break;
            }
            if (ev.t_ms < now_) throw SimulationError("event out of order");
            now_ = ev.t_ms;
            dispatch(ev);
            ++result.events_processed;
            if (cfg_.check_invariants) check_all();
            if (cfg_.progress_interval_ms > 0.0 && now_ >= next_progress) {
                spdlog::info("t={:.0f} ms apps_done={}/{} live={} waiting={} running={}", now_, apps_done_,
                             apps_.size(), reqs_.size(), waiting_.size(), running_.size());
                while (next_progress <= now_) next_progress += cfg_.progress_interval_ms;
            }
        }

        result.apps_done = apps_done_;
        if (apps_done_ < apps_.size() || !reqs_.empty()) {
            result.truncated = true;
            Json extra;
            extra["live_requests"] = reqs_.size();
            extra["apps_done"] = apps_done_;
            extra["apps_total"] = apps_.size();
            emit("truncated", nullptr, 0, std::move(extra));
        }
        result.end_ms = now_;
        result.host_acquisitions = pool_.host_acquisitions();
        result.trace = std::move(trace_);
        return result;
    }

private:
    struct AppState {
        std::vector<int> remaining_preds;
        std::size_t nodes_done = 0;
    };

    void dispatch(const Event& ev) {
        switch (ev.kind) {
            case EventKind::Arrival: on_arrival(ev.subject); break;
            case EventKind::StepComplete: on_step_complete(); break;
            case EventKind::CallFinish: on_call_finish(ev.subject); break;
            case EventKind::TransferDone: on_transfer_done(ev.subject); break;
            case EventKind::ReservationTick: on_reservation_tick(ev.subject, ev.aux); break;
            case EventKind::CallStart:
            case EventKind::PartitionUpdate: break;  // handled inline
        }
        engine_step();
    }

    void emit(std::string kind, const Request* r, BlockCount blocks, Json extra = Json::object()) {
        TraceEvent ev;
        ev.t_ms = now_;
        ev.kind = std::move(kind);
        if (r) {
            ev.request_id = static_cast<std::int64_t>(r->id);
            ev.app_id = static_cast<std::int64_t>(r->app_id);
            ev.agent_type = r->agent_type;
        }
        ev.blocks = blocks;
        ev.extra = std::move(extra);
        trace_.push_back(std::move(ev));
    }

    void set_state(Request& r, RequestState to) {
        if (!is_allowed_transition(r.state, to)) {
            throw SimulationError("request " + std::to_string(r.id) + ": illegal transition " +
                                  std::string(to_string(r.state)) + " -> " + std::string(to_string(to)));
        }
        r.state = to;
    }

    Request& req(RequestId id) { return reqs_.at(id); }

    // ---- arrivals and spawning ----

    void on_arrival(std::uint64_t app_id) {
        auto& st = app_state_[app_id];
        st.remaining_preds.resize(graph_.size());
        for (std::size_t i = 0; i < graph_.size(); ++i) st.remaining_preds[i] = static_cast<int>(graph_.predecessors(i).size());
        TraceEvent ev;
        ev.t_ms = now_;
        ev.kind = "app_arrival";
        ev.app_id = static_cast<std::int64_t>(app_id);
        trace_.push_back(std::move(ev));
        for (auto entry : graph_.entries()) spawn(app_id, entry);
    }

    void spawn(std::uint64_t app_id, NodeIndex node) {
        const auto& plan = apps_[app_id].nodes[node];
        Request r;
        r.id = next_request_id_++;
        r.app_id = app_id;
        r.node = node;
        r.agent_type = graph_.node(node).agent_type;
        r.arrival_ms = now_;
        r.prompt_tokens = plan.prompt_tokens;
        r.segment_outputs = plan.segment_outputs;
        r.wait_since_ms = now_;
        r.demand_tokens = plan.expected_demand_tokens;
        r.static_score = node_static_[node];
        Json extra;
        extra["node"] = graph_.node(node).id;
        extra["prompt_tokens"] = r.prompt_tokens;
        extra["output_tokens"] = r.output_tokens();
        emit("request_spawn", &r, 0, std::move(extra));
        waiting_.push_back(r.id);
        reqs_.emplace(r.id, std::move(r));
    }

    // ---- engine step ----

    double hybrid_of(const Request& r) const {
        return combine_scores(r.static_score, dynamic_priority((now_ - r.wait_since_ms) / cfg_.priority_wait_unit_ms, r.demand_tokens));
    }

    void refresh_type_scores() {
        std::vector<WaitingSnapshot> snap;
        snap.reserve(waiting_.size());
        for (auto id : waiting_) {
            const auto& r = reqs_.at(id);
            snap.push_back({r.agent_type, (now_ - r.wait_since_ms) / cfg_.priority_wait_unit_ms, r.demand_tokens});
        }
        type_scores_ = score_agent_types(snap, graph_, cfg_.w_static);
    }

    bool has_reservation_room(const std::string& type) const {
        const auto* res = pool_.reservation(type);
        return res && res->unclaimed() > 0;
    }

    void engine_step() {
        if (step_in_flight_) return;
        refresh_type_scores();

        // (1) predictive uploads that are due but could not start yet.
        retry_pending_uploads();

        // Requests whose cache is already on the device rejoin the batch first;
        // they need no new blocks and must not become eviction victims.
        std::set<RequestId> admitted;
        for (auto id : waiting_) {
            if (running_.size() >= static_cast<std::size_t>(cfg_.max_batch_size)) break;
            auto& r = req(id);
            if (!r.resident()) continue;
            set_state(r, RequestState::Decode);
            admit(r, true);
            admitted.insert(id);
        }
        if (!admitted.empty()) {
            std::erase_if(waiting_, [&](RequestId id) { return admitted.count(id) > 0; });
            admitted.clear();
        }

        // Decode growth of requests already running comes before admission so
        // new admissions cannot starve them.
        grow(running_);

        // (3) admission.
        std::vector<RequestId> order = waiting_;
        if (cfg_.policy.space_scheduler) {
            // Preempted requests keep their place at the head of the queue, as
            // they do under FCFS; the rest go by hybrid priority.
            std::vector<std::tuple<bool, double, RequestId>> keyed;
            for (auto id : order) {
                const auto& r = reqs_.at(id);
                keyed.emplace_back(r.needs_recompute, hybrid_of(r), id);
            }
            std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
                if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a);
                return std::get<1>(a) > std::get<1>(b);
            });
            for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = std::get<2>(keyed[i]);
        }
        double prefill_ms = 0.0;
        std::int64_t prefill_tokens = 0;
        std::vector<RequestId> admitted_resident;
        bool blocked = false;
        // Uploads that are due but stalled, and reservation chunks a tick could
        // not fill, get the next free blocks ahead of new admissions.
        const BlockCount backlog = upload_backlog();
        for (auto id : order) {
            if (running_.size() >= static_cast<std::size_t>(cfg_.max_batch_size)) break;
            auto& r = req(id);
            if (r.resident()) {
                set_state(r, RequestState::Decode);
                admit(r, true);
                admitted_resident.push_back(id);
                admitted.insert(id);
                continue;
            }
            if (blocked && !(cfg_.policy.space_scheduler && has_reservation_room(r.agent_type))) continue;
            const BlockCount need = blocks_for(r.context_tokens() + 1, cfg_.block_size_tokens);
            if (pool_.available_for(r.agent_type) - need - backlog < watermark_blocks_ ||
                !pool_.allocate(r.id, r.agent_type, need)) {
                blocked = true;
                continue;
            }
            if (r.needs_recompute) {
                prefill_ms += cfg_.cost.recompute_time(r.footprint(cfg_.block_size_tokens));
            } else {
                prefill_ms += static_cast<double>(r.prompt_tokens) / cfg_.prefill_tokens_per_ms;
                prefill_tokens += r.prompt_tokens;
            }
            const bool recompute = r.needs_recompute;
            r.cache = CacheLocation::Device;
            r.needs_recompute = false;
            set_state(r, RequestState::Prefill);
            admit(r, false, recompute);
            admitted.insert(id);
        }
        if (!admitted.empty()) {
            std::erase_if(waiting_, [&](RequestId id) { return admitted.count(id) > 0; });
        }
        grow(admitted_resident);

        // (4)/(5) run the batch.
        if (running_.empty()) {
            if ((!pending_uploads_.empty() || !waiting_.empty()) && !breaking_deadlock_ && !anything_in_motion()) {
                break_deadlock();
                return;
            }
            if (!idle_) {
                idle_ = true;
                emit_sample(0, 0.0);
            }
            return;
        }
        idle_ = false;
        ++steps_;
        accumulate_usage();
        if (cfg_.policy.space_scheduler && steps_ % cfg_.partition.update_period_steps == 0) update_partition();

        batch_ = running_;
        step_dt_ = cfg_.step_time(batch_.size()) + prefill_ms;
        step_in_flight_ = true;
        queue_.push(now_ + step_dt_, EventKind::StepComplete, 0);
        emit_sample(batch_.size(), step_dt_, prefill_tokens);
    }

    BlockCount upload_backlog() const {
        BlockCount n = 0;
        for (auto id : pending_uploads_) n += pool_.host_in_use(id) - pool_.staged(id);
        for (const auto& [id, r] : reqs_) {
            if (r.gradual && !pending_uploads_.count(id)) n += r.gradual->shortfall;
        }
        return n;
    }

    bool anything_in_motion() const {
        if (step_in_flight_) return true;
        for (const auto& [id, r] : reqs_) {
            if (r.transfer || r.call_active) return true;
        }
        return false;
    }

    // Nothing runs and nothing will free memory. Staged blocks of stalled
    // uploads or idle reservations may be what blocks progress, so hand them
    // back and try once more.
    void break_deadlock() {
        BlockCount released = 0;
        for (auto id : std::vector<RequestId>(pending_uploads_.begin(), pending_uploads_.end())) {
            released += pool_.release_staged(id);
            req(id).gradual.reset();
        }
        const BlockCount reserved = pool_.unclaimed_reserved_total();
        if (released == 0 && reserved == 0) return;
        pool_.set_reservation_targets({});
        plan_.reserve_num.clear();
        Json extra;
        extra["released_staged"] = released;
        extra["released_reserved"] = reserved;
        emit("deadlock_break", nullptr, released + reserved, std::move(extra));
        breaking_deadlock_ = true;
        engine_step();
        breaking_deadlock_ = false;
    }

    void admit(Request& r, bool resident, bool recompute = false) {
        r.admit_seq = ++admit_counter_;
        if (r.first_scheduled_ms < 0.0) r.first_scheduled_ms = now_;
        running_.push_back(r.id);
        Json extra;
        extra["resident"] = resident;
        extra["recompute"] = recompute;
        extra["waited_ms"] = now_ - r.wait_since_ms;
        emit("admit", &r, pool_.device_used(r.id), std::move(extra));
    }

    void grow(const std::vector<RequestId>& ids) {
        for (auto id : std::vector<RequestId>(ids)) {
            auto it = reqs_.find(id);
            if (it == reqs_.end()) continue;
            auto& r = it->second;
            if (r.state != RequestState::Decode) continue;
            if (std::find(running_.begin(), running_.end(), id) == running_.end()) continue;
            const BlockCount need = blocks_for(r.context_tokens() + 1, cfg_.block_size_tokens) - pool_.device_used(id);
            if (need <= 0) continue;
            if (pool_.allocate(id, r.agent_type, need)) continue;
            evict_for_pressure(r, need);
            if (pool_.allocate(id, r.agent_type, need)) continue;
            self_preempt(r);
        }
    }

    void emit_sample(std::size_t batch, double dt, std::int64_t prefill_tokens = 0) {
        BlockCount active = 0;
        for (auto id : running_) active += pool_.device_used(id);
        BlockCount stalled = 0;
        for (const auto& [id, r] : reqs_) {
            if (r.call_active) stalled += pool_.device_used(id);
        }
        Json extra;
        extra["batch"] = batch;
        extra["dt_ms"] = dt;
        extra["prefill_tokens"] = prefill_tokens;
        extra["total"] = pool_.device_total();
        extra["used"] = pool_.device_occupied();
        extra["active"] = active;
        extra["stalled"] = stalled;
        extra["waiting"] = waiting_.size();
        extra["free"] = pool_.device_free();
        extra["staged"] = pool_.staged_total();
        extra["reserved"] = pool_.unclaimed_reserved_total();
        emit("step", nullptr, pool_.device_occupied(), std::move(extra));
    }

    void accumulate_usage() {
        usage_sum_ += static_cast<double>(pool_.device_occupied());
        for (const auto& [type, n] : pool_.usage_by_type()) usage_by_type_sum_[type] += static_cast<double>(n);
        ++usage_steps_;
    }

    void update_partition() {
        UsageSample usage;
        if (usage_steps_ > 0) {
            usage.used_blocks = usage_sum_ / usage_steps_;
            for (const auto& [type, sum] : usage_by_type_sum_) usage.by_type[type] = sum / usage_steps_;
        }
        usage_sum_ = 0.0;
        usage_by_type_sum_.clear();
        usage_steps_ = 0;

        const auto previous = plan_.critical_set;
        plan_ = update_memory_reservations(plan_, pool_.device_total(), usage, type_scores_);
        pool_.set_reservation_targets(capped_targets());

        Json extra;
        extra["usage_ratio"] = usage.used_blocks / static_cast<double>(pool_.device_total());
        extra["reserve_ratio"] = plan_.total_reserve_ratio;
        extra["r_total"] = plan_.r_total;
        extra["critical"] = plan_.critical_set;
        Json reserve = Json::object();
        for (const auto& [type, n] : plan_.reserve_num) reserve[type] = n;
        extra["reserve"] = std::move(reserve);
        emit("partition_updated", nullptr, static_cast<BlockCount>(plan_.r_total), std::move(extra));
        if (previous != plan_.critical_set) {
            Json ch;
            ch["critical"] = plan_.critical_set;
            emit("critical_set_changed", nullptr, 0, std::move(ch));
        }
    }

    // Growing a reservation may only take blocks the running batch does not
    // need for its next step; otherwise set-aside blocks would force preemptions.
    std::map<std::string, BlockCount> capped_targets() const {
        const BlockCount headroom = watermark_blocks_ + static_cast<BlockCount>(running_.size());
        BlockCount spare = std::max<BlockCount>(0, pool_.device_free() - headroom);
        std::map<std::string, BlockCount> out;
        for (const auto& [type, target] : plan_.reserve_num) {
            const auto* res = pool_.reservation(type);
            const BlockCount current = res ? res->reserved_blocks : 0;
            const BlockCount grow = std::min(std::max<BlockCount>(0, target - current), spare);
            spare -= grow;
            out[type] = std::min(target, current + grow);
        }
        return out;
    }

    // ---- pressure ----

    // The reservation plan changes only at partition updates, but eviction
    // protection follows the current scores.
    static bool contains(const std::vector<std::string>& set, const std::string& type) {
        return std::find(set.begin(), set.end(), type) != set.end();
    }

    void evict_for_pressure(Request& requester, BlockCount needed) {
        const auto critical_now = select_critical(type_scores_, cfg_.partition.critical_ratio);
        const bool protect = cfg_.policy.space_scheduler && !contains(critical_now, requester.agent_type);
        struct Cand {
            double score;
            std::uint64_t admit_seq;
            RequestId id;
        };
        std::vector<Cand> cands;
        for (const auto& [id, r] : reqs_) {
            if (id == requester.id || r.cache != CacheLocation::Device || r.transfer) continue;
            const bool stalled = r.state == RequestState::StalledFC;
            const bool waiting_resident = r.state == RequestState::Waiting && r.resident();
            if (!stalled && !waiting_resident) continue;
            if (pool_.device_used(id) == 0) continue;
            if (protect && contains(critical_now, r.agent_type)) continue;
            cands.push_back({score_of(type_scores_, r.agent_type), r.admit_seq, id});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score < b.score;
            if (a.admit_seq != b.admit_seq) return a.admit_seq > b.admit_seq;
            return a.id > b.id;
        });
        const double cause_score = score_of(type_scores_, requester.agent_type);
        for (const auto& c : cands) {
            if (pool_.available_for(requester.agent_type) >= needed) break;
            auto& victim = req(c.id);
            const BlockCount freed = pool_.free_all(victim.id);
            victim.cache = CacheLocation::Dropped;
            victim.needs_recompute = true;
            if (victim.state == RequestState::StalledFC) {
                set_state(victim, RequestState::Evicted);
            } else {
                set_state(victim, RequestState::Evicted);
                set_state(victim, RequestState::Waiting);
            }
            const bool inversion = detect_critical_inversion(c.score, cause_score);
            Json extra;
            extra["cause_request"] = requester.id;
            extra["cause_type"] = requester.agent_type;
            extra["victim_score"] = c.score;
            extra["cause_score"] = cause_score;
            extra["inversion"] = inversion;
            extra["self"] = false;
            emit("preemption", &victim, freed, extra);
            if (inversion) emit("critical_inversion", &victim, freed, std::move(extra));
        }
    }

    void self_preempt(Request& r) {
        const BlockCount freed = pool_.free_all(r.id);
        r.cache = CacheLocation::Dropped;
        r.needs_recompute = true;
        std::erase(running_, r.id);
        set_state(r, RequestState::Evicted);
        set_state(r, RequestState::Waiting);
        waiting_.insert(waiting_.begin(), r.id);
        Json extra;
        extra["cause_request"] = r.id;
        extra["cause_type"] = r.agent_type;
        extra["inversion"] = false;
        extra["self"] = true;
        emit("preemption", &r, freed, std::move(extra));
    }

    // ---- step completion ----

    void on_step_complete() {
        step_in_flight_ = false;
        tput_.push(static_cast<double>(batch_.size()), step_dt_);
        const auto batch = std::move(batch_);
        batch_.clear();
        for (auto id : batch) {
            auto& r = req(id);
            ++r.generated;
            ++r.segment_generated;
            if (r.state == RequestState::Prefill) set_state(r, RequestState::Decode);
            if (r.segment_generated >= r.segment_outputs[r.segment]) on_generation_complete(r);
        }
    }

    void on_generation_complete(Request& r) {
        std::erase(running_, r.id);
        const auto& node = graph_.node(r.node);
        if (node.call && r.segment < node.call->stages.size()) {
            start_call(r, node);
        } else {
            finish_request(r);
        }
    }

    std::vector<WaitingDemand> waiting_demands() const {
        std::vector<WaitingDemand> out;
        for (auto id : waiting_) {
            const auto& w = reqs_.at(id);
            if (!w.resident()) out.push_back({id, w.demand_tokens});
        }
        return out;
    }

    void start_call(Request& r, const Node& node) {
        const auto& call = *node.call;
        const std::size_t idx = r.segment;
        r.call_active = true;
        r.call_index = idx;
        r.call_start_ms = now_;
        r.call_latency_ms = apps_[r.app_id].nodes[r.node].call_latencies_ms[idx];
        ++r.segment;
        r.segment_generated = 0;
        set_state(r, RequestState::StalledFC);
        queue_.push(now_ + r.call_latency_ms, EventKind::CallFinish, r.id);

        const BlockCount blocks = pool_.device_used(r.id);
        Json extra;
        extra["label"] = call.stages[idx];
        extra["latency_ms"] = r.call_latency_ms;
        emit("call_start", &r, blocks, std::move(extra));

        if (cfg_.policy.evict_stalled) {
            pool_.free_all(r.id);
            r.cache = CacheLocation::Dropped;
            r.needs_recompute = true;
            set_state(r, RequestState::Evicted);
            emit("stall_evict", &r, blocks);
            return;
        }
        if (!cfg_.policy.time_scheduler) return;

        OffloadCandidate cand{r.id, r.agent_type, call.stages[idx], call.predict_time_ms, blocks};
        const auto demands = waiting_demands();
        const auto decision = should_offload(cand, demands, cfg_.cost, table_, tput_.tokens_per_s());
        Json d;
        d["offload"] = decision.offload();
        d["t_fc"] = decision.t_fc;
        d["t_transfer"] = decision.t_transfer;
        d["t_window"] = decision.t_window;
        d["n_capacity"] = decision.n_capacity;
        if (decision.matched_waiting_request) d["matched"] = *decision.matched_waiting_request;
        emit("offload_decided", &r, blocks, std::move(d));
        if (!decision.offload()) return;

        auto ticket = pool_.offload(r.id, blocks, now_, cfg_.cost);
        if (!ticket) {
            emit("offload_refused", &r, blocks);
            return;
        }
        r.transfer = *ticket;
        r.cache = CacheLocation::Offloading;
        queue_.push(ticket->done_ms, EventKind::TransferDone, r.id);
        Json o;
        o["done_ms"] = ticket->done_ms;
        o["fresh_host_blocks"] = ticket->fresh_host_blocks;
        emit("offload_started", &r, blocks, std::move(o));

        const auto plan = plan_predictive_upload(decision, now_, ticket->done_ms, cfg_.cost, blocks, cfg_.upload);
        if (!plan.immediate && plan.gradual) {
            r.gradual = pool_.begin_gradual_reservation(r.id, blocks, plan.reservation_start, plan.reservation_deadline,
                                                         cfg_.upload.reservation_cycles);
            for (std::size_t i = 0; i < r.gradual->tick_times.size(); ++i) {
                queue_.push(r.gradual->tick_times[i], EventKind::ReservationTick, r.id, static_cast<int>(i));
            }
        }
        queue_.push(std::max(plan.upload_start, ticket->done_ms), EventKind::ReservationTick, r.id, kUploadDue);
        Json p;
        p["predicted_finish"] = plan.predicted_finish;
        p["upload_start"] = plan.upload_start;
        p["reservation_start"] = plan.reservation_start;
        p["reservation_deadline"] = plan.reservation_deadline;
        p["immediate"] = plan.immediate;
        p["gradual"] = plan.gradual;
        emit("upload_planned", &r, blocks, std::move(p));
    }

    void finish_request(Request& r) {
        pool_.free_all(r.id);
        if (pool_.host_in_use(r.id) != 0 || pool_.device_used(r.id) != 0) {
            throw SimulationError("request " + std::to_string(r.id) + " finished holding blocks");
        }
        set_state(r, RequestState::Done);
        r.done_ms = now_;
        Json extra;
        extra["node"] = graph_.node(r.node).id;
        extra["latency_ms"] = now_ - r.arrival_ms;
        extra["tokens"] = r.generated;
        emit("request_done", &r, 0, std::move(extra));

        const auto app_id = r.app_id;
        const auto node = r.node;
        reqs_.erase(r.id);

        auto& st = app_state_[app_id];
        ++st.nodes_done;
        for (auto succ : graph_.successors(node)) {
            if (--st.remaining_preds[succ] == 0) spawn(app_id, succ);
        }
        if (st.nodes_done == graph_.size()) {
            ++apps_done_;
            TraceEvent ev;
            ev.t_ms = now_;
            ev.kind = "app_done";
            ev.app_id = static_cast<std::int64_t>(app_id);
            ev.extra["e2e_ms"] = now_ - apps_[app_id].arrival_ms;
            trace_.push_back(std::move(ev));
        }
    }

    // ---- calls and transfers ----

    void make_runnable(Request& r) {
        set_state(r, RequestState::Waiting);
        r.wait_since_ms = now_;
        waiting_.push_back(r.id);
    }

    void on_call_finish(RequestId id) {
        auto& r = req(id);
        const auto& node = graph_.node(r.node);
        StalledCall sc{r.agent_type, node.call->stages[r.call_index], node.call->predict_time_ms, r.cache, r.call_active};
        const auto outcome = handle_call_finish(table_, sc, r.call_latency_ms);
        r.call_active = false;
        Json extra;
        extra["label"] = sc.label;
        extra["observed_ms"] = r.call_latency_ms;
        extra["predicted_ms"] = outcome.predicted_ms;
        extra["early"] = outcome.early;
        extra["action"] = to_string(outcome.action);
        emit(outcome.early ? "call_finish_early" : "call_finish_late", &r, pool_.device_used(id), std::move(extra));

        switch (outcome.action) {
            case FinishAction::ResumeNow:
                make_runnable(r);
                break;
            case FinishAction::Recompute:
                make_runnable(r);
                break;
            case FinishAction::ImmediateUpload:
                r.upload_due = true;
                try_upload(r);
                break;
            case FinishAction::UploadAfterOffload:
                r.upload_due = true;
                break;
            case FinishAction::ResumeAtUploadDone:
                break;
        }
    }

    void try_upload(Request& r) {
        if (r.cache != CacheLocation::Host || r.transfer) return;
        const BlockCount n = pool_.host_in_use(r.id);
        auto res = pool_.upload(r.id, n, now_, cfg_.cost);
        if (res.stalled()) {
            if (!r.upload_stalled) {
                r.upload_stalled = true;
                Json extra;
                extra["staged"] = pool_.staged(r.id);
                emit("upload_stall", &r, n, std::move(extra));
            }
            pending_uploads_.insert(r.id);
            return;
        }
        pending_uploads_.erase(r.id);
        r.upload_stalled = false;
        r.upload_due = false;
        r.gradual.reset();
        r.transfer = *res.ticket;
        r.cache = CacheLocation::Uploading;
        set_state(r, RequestState::Uploading);
        queue_.push(res.ticket->done_ms, EventKind::TransferDone, r.id);
        Json extra;
        extra["from_staged"] = res.ticket->from_staged;
        extra["done_ms"] = res.ticket->done_ms;
        emit("upload_started", &r, n, std::move(extra));
    }

    void retry_pending_uploads() {
        for (auto id : std::vector<RequestId>(pending_uploads_.begin(), pending_uploads_.end())) try_upload(req(id));
    }

    void on_reservation_tick(RequestId id, int tick) {
        auto it = reqs_.find(id);
        if (it == reqs_.end()) return;
        auto& r = it->second;
        if (tick == kUploadDue) {
            if (r.cache != CacheLocation::Host && r.cache != CacheLocation::Offloading) return;
            r.upload_due = true;
            try_upload(r);
            return;
        }
        if (!r.gradual || r.gradual->next_tick != static_cast<std::size_t>(tick)) return;
        const BlockCount got = pool_.reservation_tick(*r.gradual);
        Json extra;
        extra["tick"] = tick;
        extra["claimed"] = r.gradual->claimed;
        extra["shortfall"] = r.gradual->shortfall;
        emit("reservation_tick", &r, got, std::move(extra));
    }

    void on_transfer_done(RequestId id) {
        auto& r = req(id);
        const TransferTicket t = *r.transfer;
        r.transfer.reset();
        if (t.direction == TransferDirection::Offload) {
            pool_.complete_offload(t);
            r.cache = CacheLocation::Host;
            set_state(r, RequestState::Offloaded);
            emit("offload_done", &r, t.blocks);
            if (r.upload_due) try_upload(r);
            return;
        }
        pool_.complete_upload(t);
        r.cache = CacheLocation::Device;
        Json extra;
        extra["call_active"] = r.call_active;
        emit("upload_done", &r, t.blocks, std::move(extra));
        if (r.call_active) {
            set_state(r, RequestState::StalledFC);
        } else {
            make_runnable(r);
        }
    }

    // ---- invariants ----

    void check_all() const {
        if (auto err = pool_.check_invariants()) throw SimulationError("block accounting: " + *err);
        const int bs = cfg_.block_size_tokens;
        for (const auto& [id, r] : reqs_) {
            const BlockCount dev = pool_.device_used(id);
            const BlockCount host = pool_.host_in_use(id);
            const BlockCount fp = r.footprint(bs);
            auto fail = [&](const std::string& what) {
                throw SimulationError("request " + std::to_string(id) + " (" + std::string(to_string(r.state)) +
                                      "): " + what);
            };
            const bool running = std::find(running_.begin(), running_.end(), id) != running_.end();
            switch (r.state) {
                case RequestState::Prefill:
                case RequestState::Decode:
                    if (!running) fail("not in running set");
                    if (r.cache != CacheLocation::Device || r.transfer || host != 0) {
                        fail("running before its cache is back on device");
                    }
                    if (dev < fp || dev > blocks_for(r.context_tokens() + 1, bs)) fail("device blocks off footprint");
                    break;
                case RequestState::Waiting:
                    if (running) fail("waiting request in running set");
                    if (r.resident() ? dev != fp : dev != 0) fail("waiting request block count");
                    if (host != 0) fail("waiting request holds host blocks");
                    break;
                case RequestState::StalledFC:
                    if (r.cache == CacheLocation::Device && dev != fp) fail("stalled resident block count");
                    if (r.cache == CacheLocation::Offloading && (dev != 0 || host != fp || !r.transfer)) {
                        fail("offloading block count");
                    }
                    break;
                case RequestState::Offloaded:
                    if (dev != 0 || host != fp) fail("offloaded block count");
                    break;
                case RequestState::Uploading:
                    if (dev != fp || host != fp || !r.transfer) fail("uploading block count");
                    break;
                case RequestState::Evicted:
                    if (dev != 0 || host != 0) fail("evicted request holds blocks");
                    break;
                case RequestState::Done:
                    fail("done request still live");
            }
        }
    }

    const std::vector<AppInstance>& apps_;
    EngineConfig cfg_;
    const ValidatedGraph& graph_;
    BlockPool pool_;
    FcPredictionTable table_;
    ThroughputWindow tput_;
    EventQueue queue_;
    PartitionPlan plan_;
    std::vector<HybridScore> type_scores_;
    std::vector<double> node_static_;
    BlockCount watermark_blocks_ = 0;

    std::map<RequestId, Request> reqs_;
    std::vector<RequestId> running_;
    std::vector<RequestId> waiting_;
    std::set<RequestId> pending_uploads_;
    std::vector<AppState> app_state_;
    std::size_t apps_done_ = 0;

    Trace trace_;
    double now_ = 0.0;
    bool step_in_flight_ = false;
    bool idle_ = true;
    bool breaking_deadlock_ = false;
    std::vector<RequestId> batch_;
    double step_dt_ = 0.0;
    RequestId next_request_id_ = 0;
    std::uint64_t admit_counter_ = 0;
    std::uint64_t steps_ = 0;

    double usage_sum_ = 0.0;
    std::map<std::string, double> usage_by_type_sum_;
    int usage_steps_ = 0;
};

}  // namespace

SimResult run_simulation(const std::vector<AppInstance>& apps, const EngineConfig& config, const ValidatedGraph& graph) {
    Simulator sim(apps, config, graph);
    return sim.run();
}

SimResult run_simulation(const Scenario& scenario, const EngineConfig& config, const ValidatedGraph& graph) {
    const auto apps = generate_workload(scenario, graph);
    return run_simulation(apps, config, graph);
}

}  // namespace tokencake
