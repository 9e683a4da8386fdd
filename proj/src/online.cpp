#include "evflex/online.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace evflex {

namespace {

constexpr double kClampTol = 1e-7;
constexpr double kOrderTol = 1e-4;

// Group k's lower-bound floor limited to its cap. A positive floor within
// the ordering tolerance of the cap is snapped to it: a near-empty box
// stalls ADMM and the difference is round-off.
double effective_floor(const GroupCaps& caps, std::size_t k) {
    double cap = caps.group[k];
    double f = std::min(caps.floor_at(k), cap);
    if (f > 0.0 && cap - f <= kOrderTol * std::max(1.0, cap)) return cap;
    return f;
}

using Triplet = Eigen::Triplet<double>;

void check_caps(const GroupCaps& caps) {
    for (double c : caps.group)
        if (!(c >= 0.0) || !std::isfinite(c)) throw QpError(fmt::format("group cap {} is not a finite value >= 0", c));
    if (caps.floor.empty()) return;
    if (caps.floor.size() != caps.group.size()) throw QpError("floor and caps disagree on the number of groups");
    for (std::size_t k = 0; k < caps.floor.size(); ++k)
        if (!(caps.floor[k] >= 0.0) || caps.floor[k] > caps.group[k] + kClampTol)
            throw QpError(fmt::format("group {} floor {} outside [0, {}]", k, caps.floor[k], caps.group[k]));
}

}  // namespace

void OnlineParams::validate() const {
    if (!(flexibility_weight > 0.0)) throw QpError("V must be > 0");
    if (!(carbon_weight >= 0.0)) throw QpError("beta must be >= 0");
    if (!(delay_weight > 0.0)) throw QpError("lambda must be > 0");
    if (!(rate_cap_kg_per_h > 0.0)) throw QpError("rate cap must be > 0");
    if (!(slot_duration_h > 0.0)) throw QpError("slot duration must be > 0");
}

double ev_power_cap(const EvSession& s, int slot, double efficiency, double slot_h) {
    if (s.current_energy_kwh > s.max_energy_kwh + 1e-9)
        throw ScenarioError(fmt::format("EV {}: energy {} above its maximum {}", s.id, s.current_energy_kwh,
                                        s.max_energy_kwh));
    if (!s.in_station(slot)) return 0.0;
    double headroom = std::max(s.max_energy_kwh - s.current_energy_kwh, 0.0);
    if (s.current_energy_kwh + efficiency * s.max_power_kw * slot_h <= s.max_energy_kwh) return s.max_power_kw;
    return headroom / (efficiency * slot_h);
}

double ev_must_charge(const EvSession& s, int slot, double efficiency, double slot_h) {
    if (!s.in_station(slot)) return 0.0;
    double need = std::max(s.required_energy_kwh - s.current_energy_kwh, 0.0) / (efficiency * slot_h);
    double later = s.max_power_kw * (s.departure_slot - slot - 1);
    double must = need - later;
    // Round-off below this is not a real obligation.
    if (must <= 1e-9) return 0.0;
    return std::min(must, ev_power_cap(s, slot, efficiency, slot_h));
}

std::vector<double> deadline_floor(std::span<const EvSession> fleet, int slot, double efficiency, double slot_h,
                                   std::size_t groups, std::vector<double>& per_ev) {
    std::vector<double> floor(groups, 0.0);
    per_ev.assign(fleet.size(), 0.0);
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        double m = ev_must_charge(fleet[i], slot, efficiency, slot_h);
        per_ev[i] = m;
        floor.at(static_cast<std::size_t>(fleet[i].group_index)) += m;
    }
    return floor;
}

GroupCaps compute_caps(std::span<const EvSession> fleet, int slot, double efficiency, double slot_h,
                       std::size_t groups) {
    GroupCaps caps;
    caps.group.assign(groups, 0.0);
    caps.ev.assign(fleet.size(), 0.0);
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        const auto& ev = fleet[i];
        if (ev.id != static_cast<int>(i)) throw ScenarioError("EV ids must equal their fleet index");
        double c = ev_power_cap(ev, slot, efficiency, slot_h);
        caps.ev[i] = c;
        caps.group.at(static_cast<std::size_t>(ev.group_index)) += c;
    }
    return caps;
}

QpProblem build_p4(const QueueState& state, double w, const GroupCaps& caps, const OnlineParams& prm,
                   std::span<const int> durations) {
    prm.validate();
    check_caps(caps);
    auto K = static_cast<Eigen::Index>(caps.group.size());
    if (state.charge.size() != caps.group.size() || state.delay.size() != caps.group.size() ||
        durations.size() != caps.group.size())
        throw QpError("queue state, caps and durations disagree on the number of groups");
    double Vdt = prm.flexibility_weight * prm.slot_duration_h;
    double beta = prm.carbon_weight;

    std::vector<Triplet> p;
    for (Eigen::Index k = 0; k < K; ++k) p.emplace_back(k, k, 2.0);
    if (beta > 0.0)
        for (Eigen::Index a = 0; a < K; ++a)
            for (Eigen::Index b = 0; b < K; ++b) p.emplace_back(K + a, K + b, beta * w * w);

    QpProblem qp;
    qp.P.resize(2 * K, 2 * K);
    qp.P.setFromTriplets(p.begin(), p.end());
    qp.q.resize(2 * K);
    for (Eigen::Index k = 0; k < K; ++k) {
        auto ku = static_cast<std::size_t>(k);
        qp.q[k] = Vdt - state.charge[ku] - state.delay[ku] - prm.delay_weight / durations[ku];
        qp.q[K + k] = -Vdt + beta * state.carbon * w - beta * w * prm.rate_cap_kg_per_h;
    }

    std::vector<Triplet> a;
    qp.l.resize(3 * K);
    qp.u.resize(3 * K);
    for (Eigen::Index k = 0; k < K; ++k) {
        double cap = caps.group[static_cast<std::size_t>(k)];
        a.emplace_back(k, k, 1.0);
        qp.l[k] = effective_floor(caps, static_cast<std::size_t>(k));
        qp.u[k] = cap;
        a.emplace_back(K + k, K + k, 1.0);
        qp.l[K + k] = 0.0;
        qp.u[K + k] = cap;
        a.emplace_back(2 * K + k, K + k, 1.0);
        a.emplace_back(2 * K + k, k, -1.0);
        qp.l[2 * K + k] = 0.0;
        qp.u[2 * K + k] = kInf;
    }
    qp.A.resize(3 * K, 2 * K);
    qp.A.setFromTriplets(a.begin(), a.end());
    return qp;
}

FlexibilityInterval solve_slot(const QueueState& state, double w, const GroupCaps& caps, const OnlineParams& prm,
                               std::span<const int> durations, const QpSettings& settings) {
    auto start = std::chrono::steady_clock::now();
    std::size_t K = caps.group.size();
    FlexibilityInterval out;
    out.slot = state.slot;
    out.lower.assign(K, 0.0);
    out.upper.assign(K, 0.0);
    bool any = std::any_of(caps.group.begin(), caps.group.end(), [](double c) { return c > 0.0; });
    if (any) {
        QpProblem qp = build_p4(state, w, caps, prm, durations);
        QpSolution sol = solve(qp, settings);
        if (sol.status == QpStatus::max_iterations && settings.method == QpMethod::admm) {
            // ADMM can stall on badly scaled slots; the interior-point
            // method is slower per solve but does not.
            QpSettings fallback = settings;
            fallback.method = QpMethod::interior_point;
            sol = solve(qp, fallback);
        }
        if (sol.status != QpStatus::solved)
            throw QpError(fmt::format("per-slot problem not solved ({}, primal residual {:.3g}, dual residual {:.3g})",
                                      to_string(sol.status), sol.primal_residual, sol.dual_residual));
        out.iterations = sol.iterations;
        for (std::size_t k = 0; k < K; ++k) {
            double cap = caps.group[k];
            double lo = std::clamp(sol.x[static_cast<Eigen::Index>(k)], effective_floor(caps, k), cap);
            double up = std::clamp(sol.x[static_cast<Eigen::Index>(K + k)], 0.0, cap);
            // The ordering row is only met to solver accuracy; a floor at the
            // cap pins both bounds.
            if (lo > up && lo - up <= kOrderTol * std::max(1.0, cap)) up = lo;
            if (lo > up + kClampTol)
                throw QpError(fmt::format("slot {}: group {} lower bound {} exceeds upper bound {}", state.slot, k,
                                          lo, up));
            out.lower[k] = std::min(lo, up);
            out.upper[k] = up;
        }
    } else {
        check_caps(caps);
    }
    for (std::size_t k = 0; k < K; ++k) {
        out.lower_total += out.lower[k];
        out.upper_total += out.upper[k];
    }
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

std::pair<double, double> linear_vertex(double c_lower, double c_upper, double cap, double floor) {
    floor = std::min(floor, cap);
    const std::pair<double, double> vertices[] = {{floor, floor}, {floor, cap}, {cap, cap}};
    const double values[] = {(c_lower + c_upper) * floor, c_lower * floor + c_upper * cap, (c_lower + c_upper) * cap};
    std::size_t best = 0;
    for (std::size_t v = 1; v < 3; ++v)
        if (values[v] < values[best]) best = v;
    return vertices[best];
}

FlexibilityInterval solve_slot_linear(const QueueState& state, double w, const GroupCaps& caps,
                                      const OnlineParams& prm) {
    auto start = std::chrono::steady_clock::now();
    prm.validate();
    check_caps(caps);
    std::size_t K = caps.group.size();
    if (state.charge.size() != K || state.delay.size() != K)
        throw QpError("queue state and caps disagree on the number of groups");
    double Vdt = prm.flexibility_weight * prm.slot_duration_h;
    FlexibilityInterval out;
    out.slot = state.slot;
    out.lower.assign(K, 0.0);
    out.upper.assign(K, 0.0);
    double c_upper = -Vdt + prm.carbon_weight * state.carbon * w;
    for (std::size_t k = 0; k < K; ++k) {
        double c_lower = Vdt - state.charge[k] - state.delay[k];
        auto [lo, up] = linear_vertex(c_lower, c_upper, caps.group[k], caps.floor_at(k));
        out.lower[k] = lo;
        out.upper[k] = up;
        out.lower_total += lo;
        out.upper_total += up;
    }
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

GapConstant theorem_gap_constant(const OnlineParams& prm, std::span<const int> durations, const GapBounds& b) {
    if (b.arrival_max.size() != durations.size() || b.lower_max.size() != durations.size())
        throw QpError("gap bounds and durations disagree on the number of groups");
    double B = 0.0;
    for (std::size_t k = 0; k < durations.size(); ++k) {
        double a = b.arrival_max[k];
        double lo = b.lower_max[k];
        double d = prm.delay_weight / durations[k];
        B += 0.5 * (a * a + lo * lo);
        B += 0.5 * std::max(d * d, lo * lo);
    }
    double e = b.intensity_max * b.upper_total_max;
    double r = prm.rate_cap_kg_per_h;
    B += 0.5 * prm.carbon_weight * std::max(e * e, r * r);
    return {B, B / prm.flexibility_weight};
}

}  // namespace evflex
