#pragma once

#include <span>
#include <string>
#include <vector>

#include "evflex/dispatch.hpp"
#include "evflex/online.hpp"
#include "evflex/queues.hpp"
#include "evflex/scenario.hpp"

namespace evflex {

class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a method needs to run one day: the fleet in its initial
/// state, its groups and task stream, and the carbon trace.
struct Scenario {
    SimClock clock;
    std::vector<EvSession> fleet;
    std::vector<GroupSpec> groups;
    TaskArrivalStream arrivals;
    CarbonTrace carbon;
    double efficiency = 0.95;

    std::vector<int> group_durations() const;
    void validate() const;
};

/// Builds groups and the task stream for an existing fleet. EV ids must equal
/// their fleet index; group indices are (re)assigned.
Scenario make_scenario(std::vector<EvSession> fleet, const SimClock& clock, CarbonTrace carbon, double efficiency,
                       std::vector<GroupSpec> groups);

struct SlotRecord {
    int slot = 0;
    double intensity = 0.0;
    FlexibilityInterval interval;
    double gamma = 0.0;
    double dispatch = 0.0;       // aggregate power actually delivered, kW
    double emission_rate = 0.0;  // intensity * dispatch, kg/h
    std::vector<double> stage1;  // per group (empty for methods without a ledger)
    std::vector<double> stage2;
    double undeliverable = 0.0;
    std::vector<double> arrivals;  // per group, as fed to the queues
    QueueState queues;             // backlogs at the start of the slot (proposed and B3)
};

struct GroupDelay {
    int max_delay = 0;    // slots, over completed tasks
    double bound = 0.0;   // (J_max + H_max) R_k / lambda
    double charge_max = 0.0;
    double delay_max = 0.0;
};

struct Trajectories {
    std::string method;
    std::vector<SlotRecord> slots;
    std::vector<EvSession> final_fleet;
    std::vector<GroupDelay> delays;    // queue-based methods only
    QueueState final_queues;
    double abandoned_task_kw = 0.0;    // ledger power purged at departure
    std::vector<double> solve_seconds; // per decision
};

/// EV ids of each group sorted by arrival slot, ties by id.
std::vector<std::vector<int>> members_by_arrival(std::span<const EvSession> fleet, std::size_t groups);

/// Tracks stage-2 power delivered ahead of an EV's task arrivals so later
/// tasks for already-delivered energy are not queued twice.
class PrechargeCredit {
public:
    explicit PrechargeCredit(std::size_t evs = 0) : credit_(evs, 0.0) {}
    void add(int ev_id, double power) { credit_.at(static_cast<std::size_t>(ev_id)) += power; }
    /// Returns the part of a task arrival not already covered by credit.
    double net(int ev_id, double arrival);
    double at(int ev_id) const { return credit_.at(static_cast<std::size_t>(ev_id)); }

private:
    std::vector<double> credit_;
};

}  // namespace evflex
