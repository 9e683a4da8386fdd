#pragma once

#include <span>
#include <vector>

#include "evflex/qp.hpp"
#include "evflex/queues.hpp"
#include "evflex/scenario.hpp"

namespace evflex {

struct OnlineParams {
    double flexibility_weight = 6000.0;  // V
    double carbon_weight = 10.0;         // beta
    double delay_weight = 100.0;         // lambda
    double rate_cap_kg_per_h = 30.0;     // r
    double slot_duration_h = 1.0 / 12.0;

    void validate() const;
};

/// Per-slot power caps: aggregate per group and per EV (indexed by EV id).
/// `floor` optionally raises each group's lower bound above zero; empty
/// means no floor.
struct GroupCaps {
    std::vector<double> group;
    std::vector<double> ev;
    std::vector<double> floor;

    double floor_at(std::size_t k) const { return floor.empty() ? 0.0 : floor.at(k); }
};

struct FlexibilityInterval {
    int slot = 0;
    std::vector<double> lower;  // per group
    std::vector<double> upper;
    double lower_total = 0.0;
    double upper_total = 0.0;
    double solve_seconds = 0.0;
    int iterations = 0;

    double width() const { return upper_total - lower_total; }
};

/// Largest power the EV can take this slot without leaving the station
/// window or overfilling its battery.
double ev_power_cap(const EvSession& session, int slot, double efficiency, double slot_h);

/// Power the EV must take this slot so that its required energy is still
/// reachable at full power in the slots left before departure.
double ev_must_charge(const EvSession& session, int slot, double efficiency, double slot_h);

/// Per-group sums of ev_must_charge, indexed like the caps' groups; per-EV
/// values are written to `per_ev` (indexed by EV id).
std::vector<double> deadline_floor(std::span<const EvSession> fleet, int slot, double efficiency, double slot_h,
                                   std::size_t groups, std::vector<double>& per_ev);

/// Caps for every EV (by id) and their group sums. EV ids must equal their
/// index in `fleet`.
GroupCaps compute_caps(std::span<const EvSession> fleet, int slot, double efficiency, double slot_h,
                       std::size_t groups);

/// Per-slot quadratic drift-plus-penalty problem over
/// x = (lower_1..K, upper_1..K). The squared carbon term is expanded so the
/// upper block of P is beta w^2 times the all-ones matrix.
QpProblem build_p4(const QueueState& state, double intensity, const GroupCaps& caps, const OnlineParams& params,
                   std::span<const int> group_durations);

FlexibilityInterval solve_slot(const QueueState& state, double intensity, const GroupCaps& caps,
                               const OnlineParams& params, std::span<const int> group_durations,
                               const QpSettings& settings = {});

/// Linear drift-plus-penalty variant solved per group in closed form.
FlexibilityInterval solve_slot_linear(const QueueState& state, double intensity, const GroupCaps& caps,
                                      const OnlineParams& params);

/// Closed-form minimiser of c_lower * lo + c_upper * up over
/// floor <= lo <= up <= cap. Returns (lo, up).
std::pair<double, double> linear_vertex(double c_lower, double c_upper, double cap, double floor = 0.0);

struct GapBounds {
    std::vector<double> arrival_max;  // per group
    std::vector<double> lower_max;    // per group
    double upper_total_max = 0.0;
    double intensity_max = 0.0;
};

struct GapConstant {
    double B = 0.0;
    double B_over_V = 0.0;
};

GapConstant theorem_gap_constant(const OnlineParams& params, std::span<const int> group_durations,
                                 const GapBounds& bounds);

}  // namespace evflex
