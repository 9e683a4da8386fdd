#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "evflex/offline.hpp"
#include "evflex/online.hpp"
#include "evflex/queues.hpp"
#include "evflex/scenario.hpp"

namespace evflex {

class DispatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DispatchMode { uniform_random, fixed_ratio, replay };

struct DispatchPolicy {
    DispatchMode mode = DispatchMode::uniform_random;
    double fixed_ratio = 0.5;
    std::vector<double> trace;  // replay mode, one ratio per slot
    std::uint64_t rng_seed = 2;

    void validate(int horizon_slots) const;
};

/// Produces one dispatch ratio per slot. A uniform draw is consumed every
/// slot whatever the interval looks like, so methods run with the same
/// policy see the same ratio sequence.
class RatioSource {
public:
    RatioSource(const DispatchPolicy& policy, int horizon_slots);
    double next(int slot);

private:
    DispatchPolicy policy_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

struct DispatchDraw {
    double gamma = 0.0;  // reported ratio (0 for a degenerate interval)
    double total = 0.0;  // aggregate dispatch in kW
};

DispatchDraw draw_dispatch(const FlexibilityInterval& interval, double ratio);

/// Group-level dispatch (1 - gamma) lower_k + gamma upper_k.
std::vector<double> split_to_groups(const FlexibilityInterval& interval, double gamma);

struct GroupAllocation {
    double stage1 = 0.0;
    double stage2 = 0.0;
    double undeliverable = 0.0;
    std::vector<std::pair<int, double>> per_ev;  // stage-1 shares, then stage-2 shares
    std::size_t stage2_from = 0;                 // first stage-2 entry in per_ev
    std::vector<Completion> completions;
};

/// Stage 1 serves the group's ledger FIFO within each owner's residual cap;
/// stage 2 hands the remainder to in-station members in arrival order.
/// `members` lists the group's EV ids sorted by arrival slot (ties by id).
/// Residual caps are indexed by EV id and are decremented in place.
/// Optional `must` (by EV id) is delivered first: it serves the owner's own
/// ledger entries (counted as stage 1) and any excess counts as stage 2.
GroupAllocation disaggregate_two_stage(std::size_t group, double dispatch, FifoLedger& ledger,
                                       std::span<const int> members, std::span<double> residual_caps,
                                       int slot, std::span<const double> must = {});

struct DispatchOutcome {
    int slot = 0;
    double gamma = 0.0;
    double total = 0.0;
    std::vector<double> per_group;
    std::vector<double> stage1;
    std::vector<double> stage2;
    std::vector<double> per_ev;  // indexed by EV id
    double emission_rate = 0.0;  // kg/h
    double undeliverable = 0.0;
};

/// Advances battery energy with the delivered powers (indexed by EV id).
void apply_charging(std::vector<EvSession>& fleet, std::span<const double> power, double efficiency,
                    double slot_h, int slot);

/// Weight alpha with reg = alpha lower + (1 - alpha) upper; 1 for a
/// degenerate interval.
double convex_weight(double regulation, double lower_total, double upper_total);

struct ConvexSplit {
    double alpha = 1.0;
    std::vector<double> power;   // per row of the offline solution
    std::vector<double> energy;  // alpha-weighted end-of-slot energies
};

/// Splits an aggregate regulation signal at `slot` across the offline
/// solution's EVs by blending their lower and upper trajectories.
ConvexSplit convex_combination_disaggregate(double regulation, const OfflineSolution& solution, int slot);

}  // namespace evflex
