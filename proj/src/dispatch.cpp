#include "evflex/dispatch.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace evflex {

namespace {

constexpr double kDegenerateWidth = 1e-12;
constexpr double kCapExcessTol = 1e-6;
constexpr double kSignalTol = 1e-6;

bool valid_ratio(double g) { return g >= 0.0 && g <= 1.0; }

}  // namespace

void DispatchPolicy::validate(int horizon_slots) const {
    switch (mode) {
    case DispatchMode::uniform_random:
        break;
    case DispatchMode::fixed_ratio:
        if (!valid_ratio(fixed_ratio)) throw DispatchError(fmt::format("fixed ratio {} outside [0, 1]", fixed_ratio));
        break;
    case DispatchMode::replay:
        if (trace.size() < static_cast<std::size_t>(horizon_slots))
            throw DispatchError(fmt::format("replay trace has {} ratios for a {}-slot horizon", trace.size(),
                                            horizon_slots));
        for (std::size_t t = 0; t < trace.size(); ++t)
            if (!valid_ratio(trace[t]))
                throw DispatchError(fmt::format("replay ratio {} at slot {} outside [0, 1]", trace[t], t));
        break;
    }
}

RatioSource::RatioSource(const DispatchPolicy& policy, int horizon_slots) : policy_(policy), rng_(policy.rng_seed) {
    policy_.validate(horizon_slots);
}

double RatioSource::next(int slot) {
    double u = uniform_(rng_);
    switch (policy_.mode) {
    case DispatchMode::uniform_random:
        return u;
    case DispatchMode::fixed_ratio:
        return policy_.fixed_ratio;
    case DispatchMode::replay:
        return policy_.trace.at(static_cast<std::size_t>(slot));
    }
    return u;
}

DispatchDraw draw_dispatch(const FlexibilityInterval& interval, double ratio) {
    if (!valid_ratio(ratio)) throw DispatchError(fmt::format("dispatch ratio {} outside [0, 1]", ratio));
    if (interval.upper_total < interval.lower_total)
        throw DispatchError(fmt::format("slot {}: interval [{}, {}] is reversed", interval.slot, interval.lower_total,
                                        interval.upper_total));
    if (interval.width() <= kDegenerateWidth) return {0.0, interval.lower_total};
    return {ratio, interval.lower_total + ratio * interval.width()};
}

std::vector<double> split_to_groups(const FlexibilityInterval& interval, double gamma) {
    std::vector<double> out(interval.lower.size());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = (1.0 - gamma) * interval.lower[k] + gamma * interval.upper[k];
    return out;
}

GroupAllocation disaggregate_two_stage(std::size_t group, double dispatch, FifoLedger& ledger,
                                       std::span<const int> members, std::span<double> residual_caps, int slot,
                                       std::span<const double> must) {
    if (!(dispatch >= 0.0)) throw DispatchError(fmt::format("group {} dispatch {} is negative", group, dispatch));
    double deliverable = 0.0;
    for (int id : members) deliverable += std::max(residual_caps[static_cast<std::size_t>(id)], 0.0);
    if (dispatch > deliverable + kCapExcessTol)
        throw DispatchError(fmt::format("slot {}: group {} dispatch {} exceeds its deliverable power {}", slot, group,
                                        dispatch, deliverable));

    GroupAllocation out;
    double left = dispatch;
    std::vector<std::pair<int, double>> early;  // deadline power beyond the owner's ledger entries
    if (!must.empty()) {
        for (int id : members) {
            auto i = static_cast<std::size_t>(id);
            double& cap = residual_caps[i];
            double want = std::min({must[i], std::max(cap, 0.0), left});
            if (want <= 0.0) continue;
            ServiceResult own = ledger.serve_owner(group, id, want, slot);
            out.stage1 += own.served;
            out.per_ev.insert(out.per_ev.end(), own.per_ev.begin(), own.per_ev.end());
            out.completions.insert(out.completions.end(), own.completions.begin(), own.completions.end());
            double extra = want - own.served;
            if (extra > 0.0) early.emplace_back(id, extra);
            cap -= want;
            left -= want;
        }
    }
    ServiceResult served = ledger.serve_capped(group, std::max(left, 0.0), slot, residual_caps);
    out.stage1 += served.served;
    out.per_ev.insert(out.per_ev.end(), served.per_ev.begin(), served.per_ev.end());
    out.completions.insert(out.completions.end(), served.completions.begin(), served.completions.end());
    left = std::max(left - served.served, 0.0);
    out.stage2_from = out.per_ev.size();
    for (auto [id, p] : early) {
        out.stage2 += p;
        out.per_ev.emplace_back(id, p);
    }

    for (int id : members) {
        if (left <= 0.0) break;
        double& cap = residual_caps[static_cast<std::size_t>(id)];
        double give = std::min(left, std::max(cap, 0.0));
        if (give <= 0.0) continue;
        cap -= give;
        left -= give;
        out.stage2 += give;
        out.per_ev.emplace_back(id, give);
    }
    out.undeliverable = left;
    return out;
}

void apply_charging(std::vector<EvSession>& fleet, std::span<const double> power, double efficiency, double slot_h,
                    int slot) {
    if (power.size() != fleet.size())
        throw DispatchError(fmt::format("{} powers for {} EVs", power.size(), fleet.size()));
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        double p = power[i];
        if (p == 0.0) continue;
        auto& ev = fleet[i];
        if (p < 0.0) throw DispatchError(fmt::format("EV {}: negative charging power {}", ev.id, p));
        if (!ev.in_station(slot))
            throw DispatchError(fmt::format("EV {}: charging power {} at slot {} outside its stay", ev.id, p, slot));
        double e = ev.current_energy_kwh + efficiency * p * slot_h;
        if (e > ev.max_energy_kwh + 1e-6)
            throw DispatchError(fmt::format("EV {}: energy {} exceeds its maximum {}", ev.id, e, ev.max_energy_kwh));
        ev.current_energy_kwh = std::min(e, ev.max_energy_kwh);
    }
}

double convex_weight(double regulation, double lower_total, double upper_total) {
    double width = upper_total - lower_total;
    double tol = kSignalTol * std::max(1.0, std::abs(upper_total));
    if (regulation < lower_total - tol || regulation > upper_total + tol)
        throw DispatchError(fmt::format("regulation {} outside [{}, {}]", regulation, lower_total, upper_total));
    if (width <= kDegenerateWidth) return 1.0;
    return std::clamp((upper_total - regulation) / width, 0.0, 1.0);
}

ConvexSplit convex_combination_disaggregate(double regulation, const OfflineSolution& sol, int slot) {
    int off = slot - sol.first_slot;
    if (off < 0 || off >= sol.slots)
        throw DispatchError(fmt::format("slot {} outside the offline horizon [{}, {})", slot, sol.first_slot,
                                        sol.first_slot + sol.slots));
    auto o = static_cast<std::size_t>(off);
    ConvexSplit out;
    out.alpha = convex_weight(regulation, sol.lower_total[o], sol.upper_total[o]);
    double a = out.alpha;
    std::size_t n = sol.ev_ids.size();
    out.power.resize(n);
    out.energy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.power[i] = a * sol.lower_power[i][o] + (1.0 - a) * sol.upper_power[i][o];
        out.energy[i] = a * sol.lower_energy[i][o + 1] + (1.0 - a) * sol.upper_energy[i][o + 1];
    }
    return out;
}

}  // namespace evflex
