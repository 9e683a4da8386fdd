#pragma once

// Small scenarios shared by the unit and acceptance tests.

#include <algorithm>
#include <vector>

#include "evflex/harness.hpp"

namespace fixture {

// One vehicle, three one-hour slots, 5 kW, empty battery, 10 kWh maximum.
inline evflex::Scenario single_ev_toy(double required_kwh) {
    evflex::EvSession ev;
    ev.arrival_slot = 0;
    ev.departure_slot = 3;
    ev.required_energy_kwh = required_kwh;
    ev.max_energy_kwh = 10.0;
    ev.capacity_kwh = 10.0;
    ev.max_power_kw = 5.0;
    evflex::SimClock clock;
    clock.horizon_slots = 3;
    clock.slot_duration_h = 1.0;
    evflex::CarbonTrace carbon{std::vector<double>(3, 0.2)};
    return evflex::make_scenario({ev}, clock, carbon, 1.0, {evflex::GroupSpec{0, 3, {}}});
}

// Runs the proposed method on `sc` with dispatch powers pinned to `targets`
// for the first slots (ratio 0 afterwards). Each slot's ratio is solved from
// that slot's reported interval, which depends only on earlier slots, so one
// rerun per pinned slot suffices.
inline evflex::Trajectories pinned_dispatch_run(const evflex::Scenario& sc, const std::vector<double>& targets,
                                                const evflex::OnlineParams& params = {}) {
    evflex::DispatchPolicy policy;
    policy.mode = evflex::DispatchMode::replay;
    policy.trace.assign(static_cast<std::size_t>(sc.clock.horizon_slots), 0.0);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        auto traj = evflex::run_online(sc, params, policy, true, false);
        const auto& iv = traj.slots.at(t).interval;
        double width = iv.width();
        policy.trace[t] = width > 0.0 ? std::clamp((targets[t] - iv.lower_total) / width, 0.0, 1.0) : 0.0;
    }
    return evflex::run_online(sc, params, policy, true, false);
}

}  // namespace fixture
