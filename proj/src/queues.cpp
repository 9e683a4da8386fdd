#include "evflex/queues.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace evflex {

namespace {

void require_nonnegative(double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw QueueError(fmt::format("{} must be finite and >= 0, got {}", what, v));
}

void require_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want) throw QueueError(fmt::format("{} has length {}, expected {}", what, got, want));
}

}  // namespace

void QueueParams::validate() const {
    if (!(delay_weight > 0.0)) throw QueueError("delay weight must be > 0");
    if (!(rate_cap_kg_per_h > 0.0)) throw QueueError("rate cap must be > 0");
    if (!(carbon_weight >= 0.0)) throw QueueError("carbon queue weight must be >= 0");
    if (group_durations.empty()) throw QueueError("need at least one group");
    for (std::size_t k = 0; k < group_durations.size(); ++k) {
        if (group_durations[k] <= 0) throw QueueError("group durations must be > 0");
        if (k > 0 && group_durations[k] <= group_durations[k - 1])
            throw QueueError("group durations must be strictly increasing");
    }
}

QueueState QueueState::zero(std::size_t groups) {
    QueueState s;
    s.charge.assign(groups, 0.0);
    s.delay.assign(groups, 0.0);
    return s;
}

double update_charge_queue(double backlog, double service, double arrival) {
    require_nonnegative(backlog, "charge backlog");
    require_nonnegative(service, "service");
    require_nonnegative(arrival, "arrival");
    return std::max(backlog - service, 0.0) + arrival;
}

double update_delay_queue(double backlog, double service, double charge_before, double delay_weight,
                          int duration_slots) {
    require_nonnegative(backlog, "delay backlog");
    require_nonnegative(service, "service");
    require_nonnegative(charge_before, "charge backlog");
    if (duration_slots <= 0) throw QueueError("group duration must be > 0");
    if (!(charge_before > service)) return 0.0;
    return std::max(backlog + delay_weight / duration_slots - service, 0.0);
}

double update_carbon_queue(double backlog, double intensity, double power, double rate_cap) {
    require_nonnegative(backlog, "carbon backlog");
    require_nonnegative(intensity, "intensity");
    require_nonnegative(power, "power");
    require_nonnegative(rate_cap, "rate cap");
    return std::max(backlog + intensity * power - rate_cap, 0.0);
}

namespace {

QueueState advance(const QueueState& state, std::span<const double> service, double emitting,
                   std::span<const double> arrivals, double intensity, const QueueParams& params) {
    std::size_t K = params.groups();
    require_size(state.charge.size(), K, "charge backlog vector");
    require_size(state.delay.size(), K, "delay backlog vector");
    require_size(service.size(), K, "service vector");
    require_size(arrivals.size(), K, "arrival vector");
    QueueState next;
    next.charge.resize(K);
    next.delay.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        next.charge[k] = update_charge_queue(state.charge[k], service[k], arrivals[k]);
        next.delay[k] = update_delay_queue(state.delay[k], service[k], state.charge[k], params.delay_weight,
                                           params.group_durations[k]);
    }
    next.carbon = update_carbon_queue(state.carbon, intensity, emitting, params.rate_cap_kg_per_h);
    next.slot = state.slot + 1;
    return next;
}

}  // namespace

QueueState advance_aggregation(const QueueState& state, std::span<const double> lower, double upper_total,
                               std::span<const double> arrivals, double intensity, const QueueParams& params) {
    return advance(state, lower, upper_total, arrivals, intensity, params);
}

QueueState advance_with_dispatch(const QueueState& state, std::span<const double> stage1, double dispatch_total,
                                 std::span<const double> arrivals, double intensity, const QueueParams& params) {
    double stage1_sum = 0.0;
    for (double p : stage1) {
        require_nonnegative(p, "stage-1 dispatch");
        stage1_sum += p;
    }
    require_nonnegative(dispatch_total, "total dispatch");
    // Both sides are sums of the same powers in different orders.
    if (dispatch_total < stage1_sum - 1e-9 * std::max(1.0, stage1_sum))
        throw QueueError(fmt::format("total dispatch {} below stage-1 sum {}", dispatch_total, stage1_sum));
    return advance(state, stage1, dispatch_total, arrivals, intensity, params);
}

double delay_bound(double charge_max, double delay_max, double delay_weight, int duration_slots) {
    require_nonnegative(charge_max, "max charge backlog");
    require_nonnegative(delay_max, "max delay backlog");
    if (!(delay_weight > 0.0)) throw QueueError("delay weight must be > 0");
    return (charge_max + delay_max) * duration_slots / delay_weight;
}

FifoLedger::FifoLedger(std::size_t groups)
    : queues_(groups), charge_max_(groups, 0.0), delay_max_(groups, 0.0), done_(groups) {}

void FifoLedger::enqueue(std::size_t group, double power, int arrival_slot, int ev_id) {
    require_nonnegative(power, "task power");
    if (power <= 0.0) return;
    auto& q = queues_.at(group);
    if (!q.empty() && q.back().arrival_slot > arrival_slot)
        throw QueueError("ledger entries must be enqueued in arrival order");
    q.push_back({power, arrival_slot, ev_id});
}

void FifoLedger::finish(std::size_t group, const LedgerEntry& e, int slot, std::vector<Completion>& out) {
    Completion c{e.ev_id, e.arrival_slot, slot};
    done_[group].push_back(c);
    out.push_back(c);
}

std::vector<Completion> FifoLedger::record_service(std::size_t group, double service, int slot) {
    require_nonnegative(service, "service");
    std::vector<Completion> out;
    auto& q = queues_.at(group);
    double left = service;
    while (!q.empty() && left > 0.0) {
        auto& front = q.front();
        if (front.power <= left + kQueueTol) {
            left = std::max(left - front.power, 0.0);
            finish(group, front, slot, out);
            q.pop_front();
        } else {
            front.power -= left;
            left = 0.0;
        }
    }
    return out;
}

ServiceResult FifoLedger::serve_capped(std::size_t group, double budget, int slot, std::span<double> residual_caps) {
    require_nonnegative(budget, "stage-1 budget");
    ServiceResult res;
    auto& q = queues_.at(group);
    double left = budget;
    for (auto it = q.begin(); it != q.end() && left > kQueueTol;) {
        auto owner = static_cast<std::size_t>(it->ev_id);
        if (owner >= residual_caps.size()) throw QueueError(fmt::format("ledger owner {} has no cap", it->ev_id));
        double& cap = residual_caps[owner];
        double give = std::min({it->power, left, std::max(cap, 0.0)});
        if (give <= 0.0) {
            ++it;
            continue;
        }
        cap -= give;
        left -= give;
        res.served += give;
        res.per_ev.emplace_back(it->ev_id, give);
        if (it->power - give <= kQueueTol) {
            finish(group, *it, slot, res.completions);
            it = q.erase(it);
        } else {
            it->power -= give;
            ++it;
        }
    }
    return res;
}

ServiceResult FifoLedger::serve_owner(std::size_t group, int ev_id, double amount, int slot) {
    require_nonnegative(amount, "owner service");
    ServiceResult res;
    auto& q = queues_.at(group);
    double left = amount;
    for (auto it = q.begin(); it != q.end() && left > kQueueTol;) {
        if (it->ev_id != ev_id) {
            ++it;
            continue;
        }
        double give = std::min(it->power, left);
        left -= give;
        res.served += give;
        res.per_ev.emplace_back(ev_id, give);
        if (it->power - give <= kQueueTol) {
            finish(group, *it, slot, res.completions);
            it = q.erase(it);
        } else {
            it->power -= give;
            ++it;
        }
    }
    return res;
}

std::vector<LedgerEntry> FifoLedger::purge(std::size_t group, int ev_id) {
    auto& q = queues_.at(group);
    std::vector<LedgerEntry> dropped;
    for (auto it = q.begin(); it != q.end();) {
        if (it->ev_id == ev_id) {
            dropped.push_back(*it);
            it = q.erase(it);
        } else {
            ++it;
        }
    }
    return dropped;
}

double FifoLedger::total(std::size_t group) const {
    double s = 0.0;
    for (const auto& e : queues_.at(group)) s += e.power;
    return s;
}

void FifoLedger::observe(const QueueState& state) {
    require_size(state.charge.size(), queues_.size(), "charge backlog vector");
    for (std::size_t k = 0; k < queues_.size(); ++k) {
        charge_max_[k] = std::max(charge_max_[k], state.charge[k]);
        delay_max_[k] = std::max(delay_max_[k], state.delay[k]);
    }
}

int FifoLedger::max_completion_delay(std::size_t group) const {
    int m = 0;
    for (const auto& c : done_.at(group)) m = std::max(m, c.delay());
    return m;
}

}  // namespace evflex
