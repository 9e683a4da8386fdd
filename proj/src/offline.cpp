#include "evflex/offline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace evflex {

namespace {

using Triplet = Eigen::Triplet<double>;

// Energy deficits up to this many kW-slots are treated as solver round-off
// from earlier slots and clipped to what the remaining stay can deliver.
constexpr double kDeficitTol = 1e-5;

struct EvBlock {
    int id = 0;
    std::size_t fleet_index = 0;
    int begin = 0;  // absolute slots [begin, end)
    int end = 0;
    Eigen::Index first_var = 0;  // lower at first_var + 2j, upper at +1
    double start_energy = 0.0;
    double min_sum = 0.0;
    double max_sum = 0.0;
};

}  // namespace

QpSettings offline_qp_settings() {
    QpSettings st;
    st.method = QpMethod::interior_point;
    return st;
}

OfflineSolution solve_offline(std::span<const EvSession> fleet, const CarbonTrace& carbon, int first_slot,
                              int horizon_slots, const OfflineParams& prm, const QpSettings& settings) {
    auto start = std::chrono::steady_clock::now();
    if (horizon_slots < 1 || first_slot < 0 || first_slot >= horizon_slots)
        throw OfflineError(fmt::format("first slot {} outside a {}-slot horizon", first_slot, horizon_slots));
    if (carbon.intensity.size() < static_cast<std::size_t>(horizon_slots))
        throw OfflineError("carbon trace shorter than the horizon");
    if (!(prm.efficiency > 0.0) || !(prm.slot_duration_h > 0.0) || !(prm.epsilon >= 0.0))
        throw OfflineError("efficiency and slot duration must be > 0 and epsilon >= 0");
    const double dt = prm.slot_duration_h;
    const double gain = prm.efficiency * dt;
    const int slots = horizon_slots - first_slot;
    const double budget = std::max(prm.carbon_budget_kg, 0.0);

    std::vector<EvBlock> blocks;
    Eigen::Index nvars = 0;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        const auto& ev = fleet[i];
        if (ev.departure_slot <= first_slot) continue;
        EvBlock b;
        b.id = ev.id;
        b.fleet_index = i;
        b.begin = std::max(ev.arrival_slot, first_slot);
        b.end = std::min(ev.departure_slot, horizon_slots);
        b.first_var = nvars;
        b.start_energy = ev.current_energy_kwh;
        int window = std::max(b.end - b.begin, 0);
        nvars += 2 * window;
        double reach = ev.max_power_kw * window;
        b.max_sum = std::max((ev.max_energy_kwh - b.start_energy) / gain, 0.0);
        b.min_sum = std::max((ev.required_energy_kwh - b.start_energy) / gain, 0.0);
        double ceiling = std::min(reach, b.max_sum);
        if (b.min_sum > ceiling + kDeficitTol)
            throw OfflineError(fmt::format("slot {}: EV {} cannot reach its required energy ({} kW-slots needed, {} "
                                           "available)",
                                           first_slot, ev.id, b.min_sum, ceiling));
        b.min_sum = std::min(b.min_sum, ceiling);
        blocks.push_back(b);
    }
    const Eigen::Index flex0 = nvars;
    const Eigen::Index n = nvars + slots;

    QpProblem qp;
    std::vector<double> l, u;
    std::vector<Triplet> a;
    auto add_row = [&](double lo, double hi) {
        l.push_back(lo);
        u.push_back(hi);
        return static_cast<Eigen::Index>(l.size() - 1);
    };

    std::vector<Triplet> flex_terms;
    std::vector<Triplet> carbon_terms;
    for (const auto& b : blocks) {
        const auto& ev = fleet[b.fleet_index];
        for (int t = b.begin; t < b.end; ++t) {
            Eigen::Index lo = b.first_var + 2 * (t - b.begin);
            Eigen::Index up = lo + 1;
            a.emplace_back(add_row(0.0, ev.max_power_kw), lo, 1.0);
            a.emplace_back(add_row(0.0, ev.max_power_kw), up, 1.0);
            Eigen::Index r = add_row(0.0, kInf);
            a.emplace_back(r, up, 1.0);
            a.emplace_back(r, lo, -1.0);
            Eigen::Index f = flex0 + (t - first_slot);
            flex_terms.emplace_back(f, up, -1.0);
            flex_terms.emplace_back(f, lo, 1.0);
            carbon_terms.emplace_back(0, up, carbon.at(t) * dt);
        }
        if (b.end > b.begin) {
            Eigen::Index lo_sum = add_row(b.min_sum, b.max_sum);
            Eigen::Index up_sum = add_row(b.min_sum, b.max_sum);
            for (int t = b.begin; t < b.end; ++t) {
                Eigen::Index lo = b.first_var + 2 * (t - b.begin);
                a.emplace_back(lo_sum, lo, 1.0);
                a.emplace_back(up_sum, lo + 1, 1.0);
            }
        }
    }
    // flex_t - sum_i (upper - lower) = 0
    std::vector<Eigen::Index> flex_row(static_cast<std::size_t>(slots));
    for (int j = 0; j < slots; ++j) {
        flex_row[static_cast<std::size_t>(j)] = add_row(0.0, 0.0);
        a.emplace_back(flex_row[static_cast<std::size_t>(j)], flex0 + j, 1.0);
    }
    for (const auto& tr : flex_terms) a.emplace_back(flex_row[static_cast<std::size_t>(tr.row() - flex0)], tr.col(), tr.value());
    if (!carbon_terms.empty()) {
        Eigen::Index carbon_row = add_row(-kInf, budget);
        for (const auto& tr : carbon_terms) a.emplace_back(carbon_row, tr.col(), tr.value());
    }

    auto m = static_cast<Eigen::Index>(l.size());
    qp.A.resize(m, n);
    qp.A.setFromTriplets(a.begin(), a.end());
    qp.l = Eigen::Map<const Vector>(l.data(), m);
    qp.u = Eigen::Map<const Vector>(u.data(), m);
    qp.q = Vector::Zero(n);
    std::vector<Triplet> p;
    for (int j = 0; j < slots; ++j) {
        qp.q[flex0 + j] = -dt;
        if (prm.epsilon > 0.0) p.emplace_back(flex0 + j, flex0 + j, 2.0 * prm.epsilon);
    }
    qp.P.resize(n, n);
    qp.P.setFromTriplets(p.begin(), p.end());

    QpSolution sol = solve(qp, settings);
    if (sol.status != QpStatus::solved)
        throw OfflineError(fmt::format("slot {}: offline problem not solved ({}, primal residual {:.3g}, dual residual "
                                       "{:.3g})",
                                       first_slot, to_string(sol.status), sol.primal_residual, sol.dual_residual));
    OfflineSolution out;
    out.first_slot = first_slot;
    out.slots = slots;
    out.epsilon = prm.epsilon;
    out.carbon_budget_kg = budget;
    out.iterations = sol.iterations;
    out.lower_total.assign(static_cast<std::size_t>(slots), 0.0);
    out.upper_total.assign(static_cast<std::size_t>(slots), 0.0);
    for (const auto& b : blocks) {
        const auto& ev = fleet[b.fleet_index];
        std::vector<double> lo(static_cast<std::size_t>(slots), 0.0), up(static_cast<std::size_t>(slots), 0.0);
        for (int t = b.begin; t < b.end; ++t) {
            Eigen::Index v = b.first_var + 2 * (t - b.begin);
            auto j = static_cast<std::size_t>(t - first_slot);
            up[j] = std::clamp(sol.x[v + 1], 0.0, ev.max_power_kw);
            lo[j] = std::min(std::clamp(sol.x[v], 0.0, ev.max_power_kw), up[j]);
            out.lower_total[j] += lo[j];
            out.upper_total[j] += up[j];
        }
        std::vector<double> le(static_cast<std::size_t>(slots) + 1), ue(static_cast<std::size_t>(slots) + 1);
        le[0] = ue[0] = b.start_energy;
        for (std::size_t j = 0; j < static_cast<std::size_t>(slots); ++j) {
            le[j + 1] = le[j] + gain * lo[j];
            ue[j + 1] = ue[j] + gain * up[j];
        }
        out.ev_ids.push_back(b.id);
        out.lower_power.push_back(std::move(lo));
        out.upper_power.push_back(std::move(up));
        out.lower_energy.push_back(std::move(le));
        out.upper_energy.push_back(std::move(ue));
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(slots); ++j) {
        double f = out.upper_total[j] - out.lower_total[j];
        out.total_flexibility_kwh += f * dt;
        out.objective += f * dt - prm.epsilon * f * f;
    }
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

OfflineSolution solve_opi(std::span<const EvSession> fleet, const CarbonTrace& carbon, const SimClock& clock,
                          double efficiency, double rate_cap_kg_per_h, double epsilon, const QpSettings& settings) {
    clock.validate();
    if (!(rate_cap_kg_per_h > 0.0)) throw OfflineError("rate cap must be > 0");
    std::vector<EvSession> fresh(fleet.begin(), fleet.end());
    for (auto& ev : fresh) ev.current_energy_kwh = ev.initial_energy_kwh;
    OfflineParams prm;
    prm.efficiency = efficiency;
    prm.slot_duration_h = clock.slot_duration_h;
    prm.epsilon = epsilon;
    prm.carbon_budget_kg = rate_cap_kg_per_h * clock.horizon_slots * clock.slot_duration_h;
    return solve_offline(fresh, carbon, 0, clock.horizon_slots, prm, settings);
}

}  // namespace evflex
