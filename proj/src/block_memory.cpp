// Copyright 2026 The tokencake-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "tokencake/block_memory.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace tokencake {

bool TransferCostModel::valid() const {
    return roundtrip_ms_per_4096_blocks > 0.0 && recompute_ms_per_4096_blocks > 0.0 && offload_fraction > 0.0 &&
           offload_fraction < 1.0;
}

double TransferCostModel::transfer_time(BlockCount n_blocks, TransferDirection direction) const {
    const double roundtrip = roundtrip_ms_per_4096_blocks * static_cast<double>(n_blocks) / kCalibrationBlocks;
    switch (direction) {
        case TransferDirection::Offload: return roundtrip * offload_fraction;
        case TransferDirection::Upload: return roundtrip * (1.0 - offload_fraction);
        case TransferDirection::Roundtrip: return roundtrip;
    }
    return roundtrip;
}

double TransferCostModel::recompute_time(BlockCount n_blocks) const {
    return recompute_ms_per_4096_blocks * static_cast<double>(n_blocks) / kCalibrationBlocks;
}

std::vector<BlockCount> split_chunks(BlockCount n, int cycles) {
    if (cycles < 1) throw std::invalid_argument("cycles must be >= 1");
    std::vector<BlockCount> chunks(static_cast<std::size_t>(cycles), n / cycles);
    const auto rem = n % cycles;
    for (BlockCount i = 0; i < rem; ++i) ++chunks[static_cast<std::size_t>(i)];
    return chunks;
}

BlockPool::BlockPool(BlockCount device_blocks, BlockCount host_blocks, PoolOptions options)
    : device_total_(device_blocks), device_free_(device_blocks), host_total_(host_blocks), options_(options) {
    if (device_blocks < 0 || host_blocks < 0) throw std::invalid_argument("pool sizes must be non-negative");
}

namespace {

template <typename Map, typename Key>
BlockCount lookup(const Map& map, const Key& key) {
    auto it = map.find(key);
    return it == map.end() ? 0 : it->second;
}

}  // namespace

BlockCount BlockPool::device_used(RequestId id) const { return lookup(used_, id); }
BlockCount BlockPool::staged(RequestId id) const { return lookup(staged_, id); }
BlockCount BlockPool::host_in_use(RequestId id) const { return lookup(host_used_, id); }

BlockCount BlockPool::unclaimed_reserved_total() const {
    BlockCount total = 0;
    for (const auto& [_, entry] : reservations_) total += entry.unclaimed();
    return total;
}

BlockCount BlockPool::available_for(const std::string& agent_type) const {
    const auto* entry = reservation(agent_type);
    return device_free_ + (entry ? entry->unclaimed() : 0);
}

const ReservationEntry* BlockPool::reservation(const std::string& agent_type) const {
    auto it = reservations_.find(agent_type);
    return it == reservations_.end() ? nullptr : &it->second;
}

std::optional<std::string> BlockPool::agent_type_of(RequestId id) const {
    auto it = type_of_.find(id);
    if (it == type_of_.end()) return std::nullopt;
    return it->second;
}

void BlockPool::add_used(RequestId id, BlockCount n) {
    used_[id] += n;
    used_total_ += n;
    used_by_type_[type_of_.at(id)] += n;
}

void BlockPool::remove_used(RequestId id, BlockCount n) {
    auto it = used_.find(id);
    it->second -= n;
    if (it->second == 0) used_.erase(it);
    used_total_ -= n;
    auto& by_type = used_by_type_[type_of_.at(id)];
    by_type -= n;
    if (by_type == 0) used_by_type_.erase(type_of_.at(id));
}

AllocationResult BlockPool::allocate(RequestId id, const std::string& agent_type, BlockCount n_blocks) {
    if (n_blocks < 1) throw std::invalid_argument("allocate: n_blocks must be >= 1");
    auto known = type_of_.find(id);
    if (known != type_of_.end() && known->second != agent_type) {
        throw std::invalid_argument("allocate: request already registered under another agent type");
    }
    auto res = reservations_.find(agent_type);
    const BlockCount from_res = res == reservations_.end() ? 0 : std::min(n_blocks, res->second.unclaimed());
    const BlockCount from_shared = n_blocks - from_res;
    if (from_shared > device_free_) return {};

    if (from_res > 0) res->second.claimed_blocks += from_res;
    device_free_ -= from_shared;
    type_of_[id] = agent_type;
    add_used(id, n_blocks);
    return {true, from_res, from_shared};
}

void BlockPool::release_to_type(const std::string& agent_type, BlockCount n) {
    auto res = reservations_.find(agent_type);
    BlockCount to_reservation = 0;
    if (res != reservations_.end()) {
        auto& entry = res->second;
        const BlockCount set_aside = entry.unclaimed();
        const BlockCount returned = std::min(n, entry.claimed_blocks);
        entry.claimed_blocks -= returned;
        // Returned claims stay set aside only while the type is under its target.
        const BlockCount room = std::max<BlockCount>(0, entry.target_blocks - (entry.claimed_blocks + set_aside));
        to_reservation = std::min(returned, room);
        entry.reserved_blocks = entry.claimed_blocks + set_aside + to_reservation;
    }
    device_free_ += n - to_reservation;
    top_up_reservations();
}

void BlockPool::top_up_reservations() {
    for (auto& [_, entry] : reservations_) {
        if (device_free_ == 0) break;
        const BlockCount want = entry.target_blocks - entry.reserved_blocks;
        if (want <= 0) continue;
        const BlockCount take = std::min(want, device_free_);
        entry.reserved_blocks += take;
        device_free_ -= take;
    }
}

void BlockPool::free(RequestId id, BlockCount n_blocks) {
    if (n_blocks < 1) throw std::invalid_argument("free: n_blocks must be >= 1");
    if (device_used(id) < n_blocks) throw std::invalid_argument("free: request holds fewer blocks than freed");
    const auto agent_type = type_of_.at(id);
    remove_used(id, n_blocks);
    release_to_type(agent_type, n_blocks);
}

BlockCount BlockPool::free_all(RequestId id) {
    const auto held = device_used(id);
    if (held > 0) free(id, held);
    return held;
}

void BlockPool::set_reservation_targets(const std::map<std::string, BlockCount>& targets) {
    for (auto& [type, entry] : reservations_) {
        if (!targets.count(type)) entry.target_blocks = 0;
    }
    for (const auto& [type, target] : targets) {
        auto& entry = reservations_[type];
        entry.agent_type = type;
        entry.target_blocks = std::max<BlockCount>(0, target);
    }
    // Shrink: hand back set-aside blocks above target; claimed ones shrink lazily.
    for (auto& [_, entry] : reservations_) {
        const BlockCount excess = entry.reserved_blocks - std::max(entry.target_blocks, entry.claimed_blocks);
        if (excess > 0) {
            entry.reserved_blocks -= excess;
            device_free_ += excess;
        }
    }
    std::erase_if(reservations_, [](const auto& kv) {
        return kv.second.target_blocks == 0 && kv.second.reserved_blocks == 0;
    });
    top_up_reservations();
}

std::optional<TransferTicket> BlockPool::offload(RequestId id, BlockCount n_blocks, double now,
                                                 const TransferCostModel& model) {
    if (n_blocks < 1 || device_used(id) < n_blocks) return std::nullopt;
    if (host_free_list_ + host_unallocated() < n_blocks) return std::nullopt;

    const BlockCount from_list = std::min(n_blocks, host_free_list_);
    const BlockCount fresh = n_blocks - from_list;
    host_free_list_ -= from_list;
    host_used_[id] += n_blocks;
    host_used_total_ += n_blocks;
    if (fresh > 0) {
        ++host_acquisitions_;
        fresh_host_blocks_ += fresh;
    }

    remove_used(id, n_blocks);
    pending_free_ += n_blocks;

    TransferTicket ticket;
    ticket.request = id;
    ticket.direction = TransferDirection::Offload;
    ticket.blocks = n_blocks;
    ticket.start_ms = now;
    ticket.done_ms = now + model.transfer_time(n_blocks, TransferDirection::Offload);
    ticket.fresh_host_blocks = fresh;
    return ticket;
}

void BlockPool::complete_offload(const TransferTicket& ticket) {
    if (ticket.direction != TransferDirection::Offload || ticket.blocks > pending_free_) {
        throw std::logic_error("complete_offload: ticket does not match pending blocks");
    }
    pending_free_ -= ticket.blocks;
    release_to_type(type_of_.at(ticket.request), ticket.blocks);
}

GradualReservation BlockPool::begin_gradual_reservation(RequestId id, BlockCount n_blocks, double start,
                                                        double deadline, int cycles) const {
    if (!(deadline > start)) throw std::invalid_argument("gradual reservation: deadline must follow start");
    GradualReservation gr;
    gr.request = id;
    gr.total = n_blocks;
    gr.chunks = split_chunks(n_blocks, cycles);
    gr.deadline = deadline;
    const double spacing = (deadline - start) / cycles;
    for (int i = 0; i < cycles; ++i) gr.tick_times.push_back(start + spacing * i);
    return gr;
}

BlockCount BlockPool::reservation_tick(GradualReservation& gr) {
    if (gr.done_ticking()) return 0;
    const BlockCount want = gr.chunks[gr.next_tick] + gr.shortfall;
    const BlockCount got = std::min(want, device_free_);
    device_free_ -= got;
    if (got > 0) {
        staged_[gr.request] += got;
        staged_total_ += got;
    }
    gr.claimed += got;
    gr.shortfall = want - got;
    ++gr.next_tick;
    return got;
}

BlockCount BlockPool::release_staged(RequestId id) {
    auto it = staged_.find(id);
    if (it == staged_.end()) return 0;
    const auto n = it->second;
    staged_.erase(it);
    staged_total_ -= n;
    device_free_ += n;
    top_up_reservations();
    return n;
}

UploadResult BlockPool::upload(RequestId id, BlockCount n_blocks, double now, const TransferCostModel& model) {
    if (n_blocks < 1 || host_in_use(id) < n_blocks) throw std::invalid_argument("upload: request holds fewer host blocks");
    const auto& agent_type = type_of_.at(id);
    const BlockCount staged_here = std::min(staged(id), n_blocks);
    const BlockCount remainder = n_blocks - staged_here;

    BlockCount from_res = 0;
    if (remainder > 0) {
        auto res = reservations_.find(agent_type);
        from_res = res == reservations_.end() ? 0 : std::min(remainder, res->second.unclaimed());
        if (remainder - from_res > device_free_) {
            ++upload_stalls_;
            return {};
        }
        if (from_res > 0) res->second.claimed_blocks += from_res;
        device_free_ -= remainder - from_res;
    }
    if (staged_here > 0) {
        auto it = staged_.find(id);
        it->second -= staged_here;
        if (it->second == 0) staged_.erase(it);
        staged_total_ -= staged_here;
    }
    // Leftover staged blocks (over-reservation) go back to the pool.
    release_staged(id);
    add_used(id, n_blocks);

    TransferTicket ticket;
    ticket.request = id;
    ticket.direction = TransferDirection::Upload;
    ticket.blocks = n_blocks;
    ticket.start_ms = now;
    ticket.done_ms = now + model.transfer_time(n_blocks, TransferDirection::Upload);
    ticket.from_staged = staged_here;
    return UploadResult{ticket};
}

void BlockPool::complete_upload(const TransferTicket& ticket) {
    if (ticket.direction != TransferDirection::Upload || host_in_use(ticket.request) < ticket.blocks) {
        throw std::logic_error("complete_upload: ticket does not match host blocks");
    }
    auto it = host_used_.find(ticket.request);
    it->second -= ticket.blocks;
    if (it->second == 0) host_used_.erase(it);
    host_used_total_ -= ticket.blocks;
    if (options_.host_buffering) host_free_list_ += ticket.blocks;
}

std::optional<std::string> BlockPool::check_invariants() const {
    std::ostringstream err;
    BlockCount unclaimed = 0;
    for (const auto& [type, entry] : reservations_) {
        if (entry.claimed_blocks < 0 || entry.claimed_blocks > entry.reserved_blocks) {
            err << "reservation '" << type << "' claimed " << entry.claimed_blocks << " outside [0, "
                << entry.reserved_blocks << "]";
            return err.str();
        }
        unclaimed += entry.unclaimed();
    }
    BlockCount used = 0;
    for (const auto& [_, n] : used_) {
        if (n <= 0) return std::string("non-positive device_used entry");
        used += n;
    }
    BlockCount staged = 0;
    for (const auto& [_, n] : staged_) staged += n;
    if (used != used_total_ || staged != staged_total_) return std::string("cached totals out of sync");
    if (device_free_ < 0 || pending_free_ < 0) return std::string("negative free or pending count");
    if (device_free_ + used + unclaimed + pending_free_ + staged != device_total_) {
        err << "device conservation broken: free " << device_free_ << " + used " << used << " + unclaimed "
            << unclaimed << " + pending " << pending_free_ << " + staged " << staged << " != " << device_total_;
        return err.str();
    }
    BlockCount host = 0;
    for (const auto& [_, n] : host_used_) host += n;
    if (host != host_used_total_ || host + host_free_list_ > host_total_ || host_free_list_ < 0) {
        err << "host accounting broken: in use " << host << " + free list " << host_free_list_ << " > "
            << host_total_;
        return err.str();
    }
    return std::nullopt;
}

}  // namespace tokencake
