#include "evflex/benchmarks.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <fmt/format.h>

namespace evflex {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

/// All EV ids sorted by arrival slot, ties by id.
std::vector<int> fleet_by_arrival(std::span<const EvSession> fleet) {
    std::vector<int> ids(fleet.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        return fleet[static_cast<std::size_t>(a)].arrival_slot < fleet[static_cast<std::size_t>(b)].arrival_slot;
    });
    return ids;
}

FlexibilityInterval aggregate_interval(int slot, double lower, double upper) {
    FlexibilityInterval iv;
    iv.slot = slot;
    iv.lower = {lower};
    iv.upper = {upper};
    iv.lower_total = lower;
    iv.upper_total = upper;
    return iv;
}

SlotRecord make_record(int slot, double intensity, FlexibilityInterval interval) {
    SlotRecord rec;
    rec.slot = slot;
    rec.intensity = intensity;
    rec.interval = std::move(interval);
    return rec;
}

void finish_record(SlotRecord& rec, std::span<const double> power) {
    rec.dispatch = std::accumulate(power.begin(), power.end(), 0.0);
    rec.emission_rate = rec.intensity * rec.dispatch;
}

}  // namespace

Trajectories run_b1(const Scenario& sc, double rate_cap) {
    sc.validate();
    if (!(rate_cap > 0.0)) throw SimulationError("rate cap must be > 0");
    const double dt = sc.clock.slot_duration_h;
    const double eff = sc.efficiency;
    Trajectories out;
    out.method = "b1";
    std::vector<EvSession> fleet = sc.fleet;
    auto order = fleet_by_arrival(fleet);
    std::vector<double> must(fleet.size()), flex(fleet.size()), power(fleet.size());

    for (int t = 0; t < sc.clock.horizon_slots; ++t) {
        auto start = Clock::now();
        double w = sc.carbon.at(t);
        double must_sum = 0.0, flex_sum = 0.0;
        for (std::size_t i = 0; i < fleet.size(); ++i) {
            const auto& ev = fleet[i];
            double cap = ev_power_cap(ev, t, eff, dt);
            double need = std::max(ev.required_energy_kwh - ev.current_energy_kwh, 0.0) / (eff * dt);
            must[i] = std::min(cap, need);
            flex[i] = cap - must[i];
            must_sum += must[i];
            flex_sum += flex[i];
        }
        double limit = rate_cap / w;
        double lower = std::min(must_sum, limit);
        double upper = std::min(must_sum + flex_sum, limit);
        out.solve_seconds.push_back(seconds_since(start));

        // The schedule charges at the upper bound: must-charge power first,
        // each pass in arrival order.
        std::fill(power.begin(), power.end(), 0.0);
        double left = upper;
        for (const auto* pass : {&must, &flex})
            for (int id : order) {
                auto i = static_cast<std::size_t>(id);
                double give = std::min(left, (*pass)[i]);
                power[i] += give;
                left -= give;
            }
        apply_charging(fleet, power, eff, dt, t);

        SlotRecord rec = make_record(t, w, aggregate_interval(t, lower, upper));
        rec.gamma = upper - lower > 1e-12 ? 1.0 : 0.0;
        finish_record(rec, power);
        out.slots.push_back(std::move(rec));
    }
    out.final_fleet = std::move(fleet);
    return out;
}

Trajectories run_b2(const Scenario& sc, double rate_cap, const DispatchPolicy& policy) {
    sc.validate();
    if (!(rate_cap > 0.0)) throw SimulationError("rate cap must be > 0");
    const double dt = sc.clock.slot_duration_h;
    const double eff = sc.efficiency;
    const int T = sc.clock.horizon_slots;
    Trajectories out;
    out.method = "b2";
    std::vector<EvSession> fleet = sc.fleet;
    auto order = fleet_by_arrival(fleet);
    FifoLedger ledger(1);
    PrechargeCredit credit(fleet.size());
    RatioSource ratios(policy, T);
    EmissionBudget budget{rate_cap, dt, 0.0};
    std::vector<double> power(fleet.size());

    for (int t = 0; t < T; ++t) {
        for (const auto& ev : fleet)
            if (ev.departure_slot == t) {
                for (const auto& e : ledger.purge(0, ev.id)) out.abandoned_task_kw += e.power;
            }
        // Arrivals are served in their own slot: the lower bound covers them.
        double arriving = 0.0;
        for (const auto& ev : fleet) {
            double a = sc.arrivals.per_ev[static_cast<std::size_t>(ev.id)].at(t);
            if (a <= 0.0) continue;
            arriving += a;
            double net = credit.net(ev.id, a);
            if (net > 0.0) ledger.enqueue(0, net, t, ev.id);
        }

        auto start = Clock::now();
        double w = sc.carbon.at(t);
        GroupCaps caps = compute_caps(fleet, t, eff, dt, sc.groups.size());
        double cap_sum = std::accumulate(caps.group.begin(), caps.group.end(), 0.0);
        double limit = std::max(budget.rate_budget(t), 0.0) / w;
        double upper = std::min(cap_sum, limit);
        double lower = std::clamp(std::min(arriving, limit), 0.0, upper);
        FlexibilityInterval iv = aggregate_interval(t, lower, upper);
        out.solve_seconds.push_back(seconds_since(start));

        DispatchDraw draw = draw_dispatch(iv, ratios.next(t));
        std::vector<double> residual = caps.ev;
        GroupAllocation alloc = disaggregate_two_stage(0, draw.total, ledger, order, residual, t);
        std::fill(power.begin(), power.end(), 0.0);
        for (std::size_t j = 0; j < alloc.per_ev.size(); ++j) {
            auto [id, p] = alloc.per_ev[j];
            power[static_cast<std::size_t>(id)] += p;
            if (j >= alloc.stage2_from) credit.add(id, p);
        }
        apply_charging(fleet, power, eff, dt, t);

        SlotRecord rec = make_record(t, w, std::move(iv));
        rec.gamma = draw.gamma;
        rec.stage1 = {alloc.stage1};
        rec.stage2 = {alloc.stage2};
        rec.undeliverable = alloc.undeliverable;
        rec.arrivals = {arriving};
        finish_record(rec, power);
        budget.consume(w, rec.dispatch);
        out.slots.push_back(std::move(rec));
    }
    out.final_fleet = std::move(fleet);
    return out;
}

Trajectories run_opi(const Scenario& sc, double rate_cap, double epsilon, const QpSettings& settings) {
    sc.validate();
    auto start = Clock::now();
    OfflineSolution sol = solve_opi(sc.fleet, sc.carbon, sc.clock, sc.efficiency, rate_cap, epsilon, settings);
    Trajectories out;
    out.method = "opi";
    out.solve_seconds.push_back(seconds_since(start));
    for (int t = 0; t < sc.clock.horizon_slots; ++t) {
        auto j = static_cast<std::size_t>(t);
        SlotRecord rec = make_record(t, sc.carbon.at(t), aggregate_interval(t, sol.lower_total[j], sol.upper_total[j]));
        rec.gamma = 1.0;
        rec.dispatch = sol.upper_total[j];
        rec.emission_rate = rec.intensity * rec.dispatch;
        out.slots.push_back(std::move(rec));
    }
    out.final_fleet = sc.fleet;
    for (std::size_t row = 0; row < sol.ev_ids.size(); ++row)
        out.final_fleet[static_cast<std::size_t>(sol.ev_ids[row])].current_energy_kwh = sol.upper_energy[row].back();
    return out;
}

Trajectories run_mpc(const Scenario& sc, double rate_cap, const DispatchPolicy& policy, double epsilon,
                     const QpSettings& settings) {
    sc.validate();
    if (!(rate_cap > 0.0)) throw SimulationError("rate cap must be > 0");
    const double dt = sc.clock.slot_duration_h;
    const double eff = sc.efficiency;
    const int T = sc.clock.horizon_slots;
    Trajectories out;
    out.method = "mpc";
    std::vector<EvSession> fleet = sc.fleet;
    RatioSource ratios(policy, T);
    EmissionBudget budget{rate_cap, dt, 0.0};
    std::vector<double> power(fleet.size());
    OfflineParams prm;
    prm.efficiency = eff;
    prm.slot_duration_h = dt;
    prm.epsilon = epsilon;

    for (int t = 0; t < T; ++t) {
        double w = sc.carbon.at(t);
        double ratio = ratios.next(t);
        std::fill(power.begin(), power.end(), 0.0);
        bool occupied = std::any_of(fleet.begin(), fleet.end(), [t](const EvSession& ev) { return ev.in_station(t); });
        if (!occupied) {
            // Nothing can charge, so the plan would only be recomputed next slot.
            SlotRecord rec = make_record(t, w, aggregate_interval(t, 0.0, 0.0));
            out.slots.push_back(std::move(rec));
            continue;
        }
        auto start = Clock::now();
        prm.carbon_budget_kg = budget.remaining_kg(T);
        OfflineSolution sol;
        try {
            sol = solve_offline(fleet, sc.carbon, t, T, prm, settings);
        } catch (const OfflineError& e) {
            throw SimulationError(fmt::format("mpc slot {}: {}", t, e.what()));
        }
        out.solve_seconds.push_back(seconds_since(start));
        FlexibilityInterval iv = aggregate_interval(t, sol.lower_total[0], sol.upper_total[0]);
        DispatchDraw draw = draw_dispatch(iv, ratio);
        ConvexSplit split = convex_combination_disaggregate(draw.total, sol, t);
        for (std::size_t row = 0; row < sol.ev_ids.size(); ++row) {
            auto i = static_cast<std::size_t>(sol.ev_ids[row]);
            double cap = ev_power_cap(fleet[i], t, eff, dt);
            power[i] = std::clamp(split.power[row], 0.0, cap);
        }
        apply_charging(fleet, power, eff, dt, t);

        SlotRecord rec = make_record(t, w, std::move(iv));
        rec.gamma = draw.gamma;
        finish_record(rec, power);
        rec.undeliverable = std::max(draw.total - rec.dispatch, 0.0);
        budget.consume(w, rec.dispatch);
        out.slots.push_back(std::move(rec));
    }
    out.final_fleet = std::move(fleet);
    return out;
}

}  // namespace evflex
