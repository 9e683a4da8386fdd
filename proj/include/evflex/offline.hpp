#pragma once

#include <span>
#include <vector>

#include "evflex/qp.hpp"
#include "evflex/scenario.hpp"

namespace evflex {

class OfflineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Upper and lower per-EV charging trajectories over [first_slot,
/// first_slot + slots). Row i of every per-EV table belongs to ev_ids[i];
/// powers are indexed by slot offset, energies by offset 0..slots (energy at
/// the start of each slot, then the final energy).
struct OfflineSolution {
    int first_slot = 0;
    int slots = 0;
    double epsilon = 0.0;
    double carbon_budget_kg = 0.0;
    std::vector<int> ev_ids;
    std::vector<std::vector<double>> lower_power;
    std::vector<std::vector<double>> upper_power;
    std::vector<std::vector<double>> lower_energy;
    std::vector<std::vector<double>> upper_energy;
    std::vector<double> lower_total;
    std::vector<double> upper_total;
    double objective = 0.0;
    double total_flexibility_kwh = 0.0;
    int iterations = 0;
    double solve_seconds = 0.0;
};

struct OfflineParams {
    double efficiency = 0.95;
    double slot_duration_h = 1.0 / 12.0;
    double epsilon = 1e-4;
    double carbon_budget_kg = 0.0;
};

/// Interior-point settings used for offline problems by default.
QpSettings offline_qp_settings();

/// Maximises total flexibility minus epsilon times its square over the
/// remaining horizon starting at `first_slot`, from each EV's current energy.
/// EVs that have already departed are skipped. Each EV's upper trajectory
/// dominates its lower one slot by slot, and the upper aggregate's emissions
/// stay within the carbon budget.
OfflineSolution solve_offline(std::span<const EvSession> fleet, const CarbonTrace& carbon, int first_slot,
                              int horizon_slots, const OfflineParams& params,
                              const QpSettings& settings = offline_qp_settings());

/// Full-horizon problem from the initial energies with budget r T dt.
OfflineSolution solve_opi(std::span<const EvSession> fleet, const CarbonTrace& carbon, const SimClock& clock,
                          double efficiency, double rate_cap_kg_per_h, double epsilon = 1e-4,
                          const QpSettings& settings = offline_qp_settings());

}  // namespace evflex
