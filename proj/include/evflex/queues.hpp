#pragma once

#include <deque>
#include <span>
#include <stdexcept>
#include <vector>

namespace evflex {

class QueueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Absolute tolerance for backlog comparisons, in kW.
inline constexpr double kQueueTol = 1e-9;

struct QueueParams {
    double delay_weight = 100.0;      // lambda
    double rate_cap_kg_per_h = 30.0;  // r
    double carbon_weight = 10.0;      // beta
    std::vector<int> group_durations; // R_k in slots

    std::size_t groups() const { return group_durations.size(); }
    void validate() const;
};

/// Backlog vector driving every per-slot decision. Backlogs are in kW,
/// the carbon backlog in kg/h.
struct QueueState {
    std::vector<double> charge;  // J_k
    std::vector<double> delay;   // H_k
    double carbon = 0.0;         // Q_c
    int slot = 0;

    static QueueState zero(std::size_t groups);
};

double update_charge_queue(double backlog, double service, double arrival);
double update_delay_queue(double backlog, double service, double charge_before, double delay_weight,
                          int duration_slots);
double update_carbon_queue(double backlog, double intensity, double power, double rate_cap);

/// Advances all queues with the interval's lower bounds as service and the
/// aggregate upper bound as the emitting power.
QueueState advance_aggregation(const QueueState& state, std::span<const double> lower,
                               double upper_total, std::span<const double> arrivals, double intensity,
                               const QueueParams& params);

/// Advances all queues with the stage-1 dispatch as service and the total
/// dispatch as the emitting power.
QueueState advance_with_dispatch(const QueueState& state, std::span<const double> stage1,
                                 double dispatch_total, std::span<const double> arrivals,
                                 double intensity, const QueueParams& params);

/// Worst-case FIFO delay in slots for a group.
double delay_bound(double charge_max, double delay_max, double delay_weight, int duration_slots);

struct LedgerEntry {
    double power = 0.0;
    int arrival_slot = 0;
    int ev_id = 0;
};

struct Completion {
    int ev_id = 0;
    int arrival_slot = 0;
    int completion_slot = 0;
    int delay() const { return completion_slot - arrival_slot; }
};

struct ServiceResult {
    double served = 0.0;
    std::vector<Completion> completions;
    std::vector<std::pair<int, double>> per_ev;  // (ev id, kW) in service order
};

/// Per-group FIFO store of charging tasks with delay bookkeeping.
class FifoLedger {
public:
    explicit FifoLedger(std::size_t groups = 0);

    std::size_t groups() const { return queues_.size(); }
    void enqueue(std::size_t group, double power, int arrival_slot, int ev_id);

    /// Consumes entries front to back until `service` kW is used up. Partial
    /// consumption leaves the remainder at the front.
    std::vector<Completion> record_service(std::size_t group, double service, int slot);

    /// Like record_service but each entry's service is limited by its owning
    /// EV's residual cap (indexed by EV id, decremented in place). Entries
    /// whose owner is saturated are skipped and keep their position.
    ServiceResult serve_capped(std::size_t group, double budget, int slot, std::span<double> residual_caps);

    /// Serves up to `amount` kW of `ev_id`'s own entries, oldest first,
    /// ahead of the FIFO order.
    ServiceResult serve_owner(std::size_t group, int ev_id, double amount, int slot);

    /// Drops every entry owned by `ev_id`; returns the dropped entries.
    std::vector<LedgerEntry> purge(std::size_t group, int ev_id);

    double total(std::size_t group) const;
    const std::deque<LedgerEntry>& entries(std::size_t group) const { return queues_.at(group); }

    /// Tracks running maxima of the group's J and H backlogs.
    void observe(const QueueState& state);
    double charge_max(std::size_t group) const { return charge_max_.at(group); }
    double delay_max(std::size_t group) const { return delay_max_.at(group); }

    const std::vector<Completion>& completions(std::size_t group) const { return done_.at(group); }
    int max_completion_delay(std::size_t group) const;

private:
    void finish(std::size_t group, const LedgerEntry& e, int slot, std::vector<Completion>& out);

    std::vector<std::deque<LedgerEntry>> queues_;
    std::vector<double> charge_max_;
    std::vector<double> delay_max_;
    std::vector<std::vector<Completion>> done_;
};

}  // namespace evflex
