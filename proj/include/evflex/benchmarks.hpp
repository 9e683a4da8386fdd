#pragma once

#include "evflex/dispatch.hpp"
#include "evflex/offline.hpp"
#include "evflex/simulation.hpp"

namespace evflex {

/// Cumulative emission allowance r t dt against what has been emitted.
struct EmissionBudget {
    double rate_cap_kg_per_h = 30.0;
    double slot_duration_h = 1.0 / 12.0;
    double consumed_kg = 0.0;

    double allowance_kg(int slots) const { return rate_cap_kg_per_h * slots * slot_duration_h; }
    double remaining_kg(int horizon_slots) const { return allowance_kg(horizon_slots) - consumed_kg; }
    /// Rate-unit budget r (slot + 1) - sum of earlier w p, in kg/h.
    double rate_budget(int slot) const { return rate_cap_kg_per_h * (slot + 1) - consumed_kg / slot_duration_h; }
    void consume(double intensity, double power_kw) { consumed_kg += intensity * power_kw * slot_duration_h; }
};

/// Charge at full power below the required energy, offer [0, cap] up to the
/// maximum energy, and cap both bounds at r / w. Curtailment is FIFO by
/// arrival, must-charge power first. EVs follow this schedule (no dispatch).
Trajectories run_b1(const Scenario& scenario, double rate_cap);

/// Lower bound = this slot's task arrivals, upper = sum of EV caps, both
/// capped by the running emission budget. Dispatch is served by a
/// fleet-wide FIFO ledger then by arrival order.
Trajectories run_b2(const Scenario& scenario, double rate_cap, const DispatchPolicy& policy);

/// Full-horizon offline solution; the upper trajectory is charged.
Trajectories run_opi(const Scenario& scenario, double rate_cap, double epsilon,
                     const QpSettings& settings = offline_qp_settings());

/// Receding-horizon offline problem re-solved every occupied slot with the
/// remaining budget; the dispatch is split by convex combination.
Trajectories run_mpc(const Scenario& scenario, double rate_cap, const DispatchPolicy& policy, double epsilon,
                     const QpSettings& settings = offline_qp_settings());

}  // namespace evflex
