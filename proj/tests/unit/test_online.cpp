#include <doctest.h>

#include <algorithm>
#include <random>

#include "evflex/online.hpp"
#include "oracles.hpp"

using namespace evflex;

namespace {

struct Instance {
    QueueState state;
    GroupCaps caps;
    std::vector<int> durations;
    OnlineParams params;
    double w = 0.5;
};

oracle::SlotInstance to_oracle(const Instance& in) {
    oracle::SlotInstance s;
    s.charge = in.state.charge;
    s.delay = in.state.delay;
    s.carbon = in.state.carbon;
    for (int d : in.durations) s.durations.push_back(d);
    s.caps = in.caps.group;
    s.intensity = in.w;
    s.V = in.params.flexibility_weight;
    s.dt = in.params.slot_duration_h;
    s.lambda = in.params.delay_weight;
    s.beta = in.params.carbon_weight;
    s.r = in.params.rate_cap_kg_per_h;
    return s;
}

Instance single_group(double J, double H, double Q, double cap) {
    Instance in;
    in.state = QueueState::zero(1);
    in.state.charge = {J};
    in.state.delay = {H};
    in.state.carbon = Q;
    in.caps.group = {cap};
    in.durations = {48};
    return in;
}

Instance random_instance(std::mt19937_64& rng, std::size_t K) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Instance in;
    in.state = QueueState::zero(K);
    for (std::size_t k = 0; k < K; ++k) {
        in.state.charge[k] = 700.0 * U(rng);
        in.state.delay[k] = 100.0 * U(rng);
        in.caps.group.push_back(5.0 + 55.0 * U(rng));
        in.durations.push_back(48 + 12 * static_cast<int>(k));
    }
    in.state.carbon = 150.0 * U(rng);
    in.w = 0.2 + 0.5 * U(rng);
    return in;
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

TEST_CASE("EV power cap follows the station window and battery headroom") {
    EvSession ev;
    ev.arrival_slot = 0;
    ev.departure_slot = 3;
    ev.max_energy_kwh = 10.0;
    ev.capacity_kwh = 10.0;
    ev.required_energy_kwh = 10.0;
    ev.max_power_kw = 5.0;
    ev.current_energy_kwh = 7.0;
    CHECK(ev_power_cap(ev, 2, 1.0, 1.0) == doctest::Approx(3.0));
    ev.current_energy_kwh = 4.0;
    CHECK(ev_power_cap(ev, 1, 1.0, 1.0) == 5.0);
    CHECK(ev_power_cap(ev, 3, 1.0, 1.0) == 0.0);
    ev.arrival_slot = 1;
    CHECK(ev_power_cap(ev, 0, 1.0, 1.0) == 0.0);
    ev.current_energy_kwh = 10.0;
    CHECK(ev_power_cap(ev, 1, 1.0, 1.0) == 0.0);
    ev.current_energy_kwh = 11.0;
    CHECK_THROWS(ev_power_cap(ev, 1, 1.0, 1.0));
}

TEST_CASE("empty queues without carbon weight give the widest interval") {
    auto in = single_group(0, 0, 0, 40);
    in.params.carbon_weight = 0.0;
    auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    CHECK(iv.lower[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(iv.upper[0] == doctest::Approx(40.0));
}

TEST_CASE("zero caps give a zero interval") {
    Instance in;
    in.state = QueueState::zero(2);
    in.caps.group = {0.0, 0.0};
    in.durations = {48, 60};
    auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    CHECK(iv.lower_total == 0.0);
    CHECK(iv.upper_total == 0.0);
}

TEST_CASE("single-group instance matches the grid oracle") {
    auto in = single_group(50, 20, 10, 40);
    auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    auto s = to_oracle(in);
    auto grid = oracle::grid_minimize({0.0, 0.0}, {40.0, 40.0},
                                      [&](const oracle::Point& x) { return oracle::slot_objective(s, x); },
                                      [&](const oracle::Point& x) { return oracle::slot_feasible(s, x); });
    CHECK(std::abs(iv.lower[0] - grid.x[0]) <= 5e-3);
    CHECK(std::abs(iv.upper[0] - grid.x[1]) <= 5e-3);
}

TEST_CASE("heavy carbon backlog collapses the interval") {
    auto in = single_group(600, 20, 1e6, 40);
    auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    auto s = to_oracle(in);
    auto grid = oracle::grid_minimize({0.0, 0.0}, {40.0, 40.0},
                                      [&](const oracle::Point& x) { return oracle::slot_objective(s, x); },
                                      [&](const oracle::Point& x) { return oracle::slot_feasible(s, x); });
    CHECK(grid.x[1] == doctest::Approx(grid.x[0]).epsilon(1e-9));
    CHECK(iv.upper[0] == doctest::Approx(iv.lower[0]).epsilon(1e-6));
    CHECK(std::abs(iv.lower[0] - grid.x[0]) <= 5e-3);
}

TEST_CASE("two-group instances match the grid oracle on unique quantities") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto in = random_instance(rng, 2);
        auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
        auto s = to_oracle(in);
        oracle::Point hi{in.caps.group[0], in.caps.group[1], in.caps.group[0], in.caps.group[1]};
        auto grid = oracle::grid_minimize({0, 0, 0, 0}, hi,
                                          [&](const oracle::Point& x) { return oracle::slot_objective(s, x); },
                                          [&](const oracle::Point& x) { return oracle::slot_feasible(s, x); });
        CHECK(std::abs(iv.lower[0] - grid.x[0]) <= 5e-3);
        CHECK(std::abs(iv.lower[1] - grid.x[1]) <= 5e-3);
        CHECK(std::abs(iv.upper_total - (grid.x[2] + grid.x[3])) <= 5e-3);
        oracle::Point mine{iv.lower[0], iv.lower[1], iv.upper[0], iv.upper[1]};
        CHECK(oracle::slot_objective(s, mine) <= grid.value + 1e-6 + 1e-9 * std::abs(grid.value));
    }
}

TEST_CASE("intervals stay ordered and within caps") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto in = random_instance(rng, 9);
        auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
        for (std::size_t k = 0; k < 9; ++k) {
            CHECK(iv.lower[k] >= 0.0);
            CHECK(iv.lower[k] <= iv.upper[k]);
            CHECK(iv.upper[k] <= in.caps.group[k]);
        }
        CHECK(iv.lower_total == doctest::Approx(sum(iv.lower)));
        CHECK(iv.upper_total == doctest::Approx(sum(iv.upper)));
    }
}

TEST_CASE("carbon backlog never raises the upper bound and charge backlog never lowers the lower bound") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        auto in = random_instance(rng, 3);
        double prev_upper = kInf;
        for (double Q : {0.0, 20.0, 50.0, 100.0, 200.0, 400.0}) {
            in.state.carbon = Q;
            auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
            CHECK(iv.upper_total <= prev_upper + 1e-5);
            prev_upper = iv.upper_total;
        }
        double prev_lower = -1.0;
        for (double J : {0.0, 200.0, 450.0, 500.0, 550.0, 800.0}) {
            in.state.charge[1] = J;
            auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
            CHECK(iv.lower[1] >= prev_lower - 1e-5);
            prev_lower = iv.lower[1];
        }
    }
}

TEST_CASE("linear vertex selection") {
    auto v = linear_vertex(5.0, -3.0, 10.0);
    CHECK(v == std::pair<double, double>{0.0, 10.0});
    v = linear_vertex(-2.0, 3.0, 10.0);
    CHECK(v == std::pair<double, double>{0.0, 0.0});
    v = linear_vertex(-5.0, 3.0, 10.0);
    CHECK(v == std::pair<double, double>{10.0, 10.0});
}

TEST_CASE("linear vertex respects a floor") {
    CHECK(linear_vertex(5.0, -3.0, 10.0, 4.0) == std::pair<double, double>{4.0, 10.0});
    CHECK(linear_vertex(-2.0, 3.0, 10.0, 4.0) == std::pair<double, double>{4.0, 4.0});
    CHECK(linear_vertex(-5.0, 3.0, 10.0, 4.0) == std::pair<double, double>{10.0, 10.0});
    CHECK(linear_vertex(1.0, 1.0, 10.0, 10.0) == std::pair<double, double>{10.0, 10.0});
}

TEST_CASE("closed-form linear variant equals a generic LP solve") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        double cl = 500.0 * U(rng);
        double cu = 500.0 * U(rng);
        double cap = 30.0 * (U(rng) + 1.0);
        auto [lo, up] = linear_vertex(cl, cu, cap);
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2, 2);
        Vector q(2);
        q << cl, cu;
        Eigen::MatrixXd A(3, 2);
        A << 1, 0, 0, 1, -1, 1;
        Vector l(3), u(3);
        l << 0, 0, 0;
        u << cap, cap, kInf;
        auto sol = solve(QpProblem::from_dense(P, q, A, l, u));
        REQUIRE(sol.status == QpStatus::solved);
        CHECK(cl * lo + cu * up <= sol.objective + 1e-5 * (1.0 + std::abs(sol.objective)));
        CHECK(cl * lo + cu * up >= sol.objective - 1e-5 * (1.0 + std::abs(sol.objective)));
    }
}

TEST_CASE("linear variant uses queue-dependent coefficients") {
    auto in = single_group(0, 0, 0, 40);
    auto iv = solve_slot_linear(in.state, in.w, in.caps, in.params);
    CHECK(iv.lower[0] == 0.0);
    CHECK(iv.upper[0] == 40.0);
    in.state.charge = {600.0};
    iv = solve_slot_linear(in.state, in.w, in.caps, in.params);
    CHECK(iv.lower[0] == 40.0);
    in.state.charge = {0.0};
    in.state.carbon = 200.0;  // beta Q w = 1000 > V dt
    iv = solve_slot_linear(in.state, in.w, in.caps, in.params);
    CHECK(iv.upper_total == 0.0);
}

TEST_CASE("gap constant") {
    OnlineParams p;
    p.carbon_weight = 0.0;
    p.delay_weight = 96.0;
    std::vector<int> durations{48};
    GapBounds b{{10.0}, {10.0}, 0.0, 0.0};
    auto g = theorem_gap_constant(p, durations, b);
    CHECK(g.B == doctest::Approx(150.0 + 0.5 * 0.0 * 900));
    p.carbon_weight = 10.0;
    b.upper_total_max = 200.0;
    b.intensity_max = 0.5;
    auto g2 = theorem_gap_constant(p, durations, b);
    CHECK(g2.B - g.B == doctest::Approx(5e4));
    double prev = kInf;
    for (double V : {1200.0, 6000.0, 12000.0}) {
        p.flexibility_weight = V;
        auto gv = theorem_gap_constant(p, durations, b);
        CHECK(gv.B_over_V < prev);
        prev = gv.B_over_V;
    }
}

namespace {

// Power that must flow now so the rest of the stay at full power still
// reaches the target, limited to what the EV can take.
double must_oracle(const EvSession& s, int slot, double eff, double dt) {
    if (slot < s.arrival_slot || slot >= s.departure_slot) return 0.0;
    double need_kwh = s.required_energy_kwh - s.current_energy_kwh;
    double later_kwh = eff * dt * s.max_power_kw * (s.departure_slot - slot - 1);
    double now_kw = (need_kwh - later_kwh) / (eff * dt);
    double cap = std::min(s.max_power_kw, (s.max_energy_kwh - s.current_energy_kwh) / (eff * dt));
    return std::clamp(now_kw, 0.0, cap);
}

}  // namespace

TEST_CASE("must-charge power keeps the target reachable") {
    EvSession ev;
    ev.arrival_slot = 0;
    ev.departure_slot = 3;
    ev.max_energy_kwh = 15.0;
    ev.capacity_kwh = 15.0;
    ev.required_energy_kwh = 12.0;
    ev.max_power_kw = 5.0;
    ev.current_energy_kwh = 0.0;
    CHECK(ev_must_charge(ev, 0, 1.0, 1.0) == doctest::Approx(2.0));
    ev.current_energy_kwh = 8.0;
    CHECK(ev_must_charge(ev, 2, 1.0, 1.0) == doctest::Approx(4.0));
    CHECK(ev_must_charge(ev, 1, 1.0, 1.0) == 0.0);
    CHECK(ev_must_charge(ev, 3, 1.0, 1.0) == 0.0);
    ev.current_energy_kwh = 12.0;
    CHECK(ev_must_charge(ev, 2, 1.0, 1.0) == 0.0);

    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        EvSession s;
        s.arrival_slot = static_cast<int>(10 * U(rng));
        s.departure_slot = s.arrival_slot + 1 + static_cast<int>(20 * U(rng));
        s.max_power_kw = 3.0 + 7.0 * U(rng);
        s.max_energy_kwh = 20.0 + 40.0 * U(rng);
        s.capacity_kwh = s.max_energy_kwh;
        s.required_energy_kwh = s.max_energy_kwh * (0.5 + 0.5 * U(rng));
        s.current_energy_kwh = s.required_energy_kwh * U(rng);
        int slot = static_cast<int>(32 * U(rng));
        double eff = 0.9 + 0.1 * U(rng);
        double got = ev_must_charge(s, slot, eff, 1.0 / 12.0);
        CHECK(got == doctest::Approx(must_oracle(s, slot, eff, 1.0 / 12.0)).epsilon(1e-9).scale(1.0));
        CHECK(got <= ev_power_cap(s, slot, eff, 1.0 / 12.0) + 1e-12);
    }
}

TEST_CASE("deadline floor sums must-charge power per group") {
    std::vector<EvSession> fleet(3);
    for (int i = 0; i < 3; ++i) {
        auto& s = fleet[static_cast<std::size_t>(i)];
        s.id = i;
        s.arrival_slot = 0;
        s.departure_slot = 2;
        s.max_power_kw = 5.0;
        s.max_energy_kwh = 20.0;
        s.capacity_kwh = 20.0;
        s.required_energy_kwh = 8.0;
        s.group_index = i == 2 ? 1 : 0;
    }
    fleet[1].current_energy_kwh = 8.0;
    std::vector<double> per_ev;
    auto floor = deadline_floor(fleet, 0, 1.0, 1.0, 2, per_ev);
    CHECK(per_ev == std::vector<double>{3.0, 0.0, 3.0});
    CHECK(floor == std::vector<double>{3.0, 3.0});
}

TEST_CASE("a floor raises the lower bound and never breaks the ordering") {
    auto in = single_group(0, 0, 0, 40);
    in.params.carbon_weight = 0.0;
    in.caps.floor = {12.0};
    auto iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    CHECK(iv.lower[0] == doctest::Approx(12.0).epsilon(1e-4));
    CHECK(iv.upper[0] == doctest::Approx(40.0).epsilon(1e-4));

    in.state.carbon = 1e4;
    in.params.carbon_weight = 10.0;
    in.caps.floor = {40.0};
    iv = solve_slot(in.state, in.w, in.caps, in.params, in.durations);
    CHECK(iv.lower[0] <= iv.upper[0]);
    CHECK(iv.lower[0] == doctest::Approx(40.0).epsilon(1e-4));

    auto lin = solve_slot_linear(in.state, in.w, in.caps, in.params);
    CHECK(lin.lower[0] == doctest::Approx(40.0));
    in.caps.floor = {50.0};
    CHECK_THROWS(solve_slot(in.state, in.w, in.caps, in.params, in.durations));
}
