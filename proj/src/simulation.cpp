#include "evflex/simulation.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace evflex {

std::vector<int> Scenario::group_durations() const {
    std::vector<int> d;
    for (const auto& g : groups) d.push_back(g.duration_slots);
    return d;
}

void Scenario::validate() const {
    clock.validate();
    if (groups.empty()) throw SimulationError("scenario has no groups");
    if (carbon.intensity.size() < static_cast<std::size_t>(clock.horizon_slots))
        throw SimulationError("carbon trace shorter than the horizon");
    if (!(efficiency > 0.0 && efficiency <= 1.0)) throw SimulationError("efficiency must be in (0, 1]");
    if (arrivals.per_ev.size() != fleet.size()) throw SimulationError("task stream does not match the fleet");
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        if (fleet[i].id != static_cast<int>(i)) throw SimulationError("EV ids must equal their fleet index");
        fleet[i].validate();
    }
}

Scenario make_scenario(std::vector<EvSession> fleet, const SimClock& clock, CarbonTrace carbon, double efficiency,
                       std::vector<GroupSpec> groups) {
    Scenario s;
    s.clock = clock;
    s.carbon = std::move(carbon);
    s.efficiency = efficiency;
    for (auto& ev : fleet) ev.group_index = assign_group(ev, groups);
    populate_groups(groups, fleet);
    s.arrivals = build_arrivals(fleet, clock, efficiency, static_cast<int>(groups.size()));
    s.fleet = std::move(fleet);
    s.groups = std::move(groups);
    s.validate();
    return s;
}

std::vector<std::vector<int>> members_by_arrival(std::span<const EvSession> fleet, std::size_t groups) {
    std::vector<std::vector<int>> out(groups);
    for (const auto& ev : fleet) out.at(static_cast<std::size_t>(ev.group_index)).push_back(ev.id);
    for (auto& m : out)
        std::sort(m.begin(), m.end(), [&](int a, int b) {
            const auto& ea = fleet[static_cast<std::size_t>(a)];
            const auto& eb = fleet[static_cast<std::size_t>(b)];
            return ea.arrival_slot != eb.arrival_slot ? ea.arrival_slot < eb.arrival_slot : a < b;
        });
    return out;
}

double PrechargeCredit::net(int ev_id, double arrival) {
    double& c = credit_.at(static_cast<std::size_t>(ev_id));
    double used = std::min(c, arrival);
    c -= used;
    double left = arrival - used;
    return left <= kQueueTol ? 0.0 : left;
}

}  // namespace evflex
