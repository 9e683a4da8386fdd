#include <doctest.h>

#include <cmath>
#include <sstream>

#include "evflex/scenario.hpp"

using namespace evflex;

namespace {

SimClock five_minute_day() { return SimClock{288, 1.0 / 12.0}; }

EvSession session(int arrival, int departure, double e_ini, double e_req, double p_max) {
    EvSession ev;
    ev.arrival_slot = arrival;
    ev.departure_slot = departure;
    ev.initial_energy_kwh = e_ini;
    ev.current_energy_kwh = e_ini;
    ev.required_energy_kwh = e_req;
    ev.max_energy_kwh = std::max(e_req, 1.0);
    ev.capacity_kwh = ev.max_energy_kwh;
    ev.max_power_kw = p_max;
    return ev;
}

}  // namespace

TEST_CASE("default groups span four to twelve hours") {
    auto groups = make_groups(FleetDistribution{}, five_minute_day());
    REQUIRE(groups.size() == 9);
    CHECK(groups.front().duration_slots == 48);
    CHECK(groups.back().duration_slots == 144);
    for (std::size_t k = 1; k < groups.size(); ++k) CHECK(groups[k].duration_slots > groups[k - 1].duration_slots);
}

TEST_CASE("sampled fleet respects the group span and is reproducible") {
    FleetDistribution dist;
    dist.rng_seed = 42;
    auto clock = five_minute_day();
    auto a = sample_fleet(dist, clock);
    auto b = sample_fleet(dist, clock);
    REQUIRE(a.size() == 100);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == static_cast<int>(i));
        CHECK(a[i].duration_slots() >= 48);
        CHECK(a[i].duration_slots() <= 144);
        CHECK(a[i].arrival_slot >= 0);
        CHECK(a[i].departure_slot <= 288);
        CHECK_NOTHROW(a[i].validate());
        CHECK(a[i].initial_energy_kwh >= 0.05 * a[i].capacity_kwh - 1e-12);
        CHECK(a[i].initial_energy_kwh <= 0.65 * a[i].capacity_kwh + 1e-12);
        CHECK(a[i].arrival_slot == b[i].arrival_slot);
        CHECK(a[i].departure_slot == b[i].departure_slot);
        CHECK(a[i].initial_energy_kwh == b[i].initial_energy_kwh);
        CHECK(a[i].capacity_kwh == b[i].capacity_kwh);
    }
}

TEST_CASE("zero spread makes every vehicle identical") {
    FleetDistribution dist;
    dist.arrival_std_h = 0.0;
    dist.departure_std_h = 0.0;
    dist.initial_soc_std = 0.0;
    dist.battery_menu = {{40.0, 6.6}};
    dist.fleet_size = 5;
    auto fleet = sample_fleet(dist, five_minute_day());
    for (const auto& ev : fleet) {
        CHECK(ev.arrival_slot == 108);
        CHECK(ev.departure_slot == 216);
        CHECK(ev.initial_energy_kwh == doctest::Approx(16.0));
        CHECK(ev.group_index == 5);  // nine hours
    }
}

TEST_CASE("incompatible distributions exhaust the resample budget") {
    FleetDistribution dist;
    dist.arrival_mean_h = 9.0;
    dist.departure_mean_h = 10.0;
    dist.arrival_std_h = 0.0;
    dist.departure_std_h = 0.0;
    CHECK_THROWS_AS(sample_fleet(dist, five_minute_day()), ScenarioError);
    dist = FleetDistribution{};
    dist.fleet_size = 0;
    CHECK_THROWS_AS(sample_fleet(dist, five_minute_day()), ScenarioError);
}

TEST_CASE("group assignment rounds to the nearest hour with ties going down") {
    auto groups = make_groups(FleetDistribution{}, five_minute_day());
    auto idx_for_hours = [&](double h) {
        for (const auto& g : groups)
            if (g.duration_slots == static_cast<int>(std::lround(h * 12))) return g.index;
        return -1;
    };
    CHECK(assign_group(session(0, 108, 0, 1, 5), groups) == idx_for_hours(9));
    CHECK(assign_group(session(0, 88, 0, 1, 5), groups) == idx_for_hours(7));  // 7 h 20 min
    CHECK(assign_group(session(0, 90, 0, 1, 5), groups) == idx_for_hours(7));  // 7 h 30 min tie
    CHECK(assign_group(session(0, 91, 0, 1, 5), groups) == idx_for_hours(8));
    CHECK_THROWS_AS(assign_group(session(0, 40, 0, 1, 5), groups), ScenarioError);
    CHECK_THROWS_AS(assign_group(session(0, 150, 0, 1, 5), groups), ScenarioError);
}

TEST_CASE("packetization splits demand into full slots and a remainder") {
    SimClock hourly{3, 1.0};
    auto two_slots = packetize(session(0, 3, 0.0, 8.0, 5.0), hourly, 1.0);
    REQUIRE(two_slots.powers.size() == 2);
    CHECK(two_slots.powers[0] == doctest::Approx(5.0));
    CHECK(two_slots.powers[1] == doctest::Approx(3.0));

    CHECK(packetize(session(0, 3, 4.0, 4.0, 5.0), hourly, 1.0).powers.empty());

    // eta = 2 / (0.95 * 10 / 12) = 2.526..; remainder = 2 / (0.95 / 12) - 20
    SimClock clock = five_minute_day();
    auto tasks = packetize(session(10, 40, 1.0, 3.0, 10.0), clock, 0.95);
    REQUIRE(tasks.powers.size() == 3);
    CHECK(tasks.first_slot == 10);
    CHECK(tasks.powers[0] == 10.0);
    CHECK(tasks.powers[1] == 10.0);
    double remainder = 2.0 * 12.0 / 0.95 - 20.0;
    CHECK(tasks.powers[2] == doctest::Approx(remainder).epsilon(1e-12));
    CHECK(remainder == doctest::Approx(5.2631578947).epsilon(1e-9));
    double energy = 0.0;
    for (double p : tasks.powers) energy += p * 0.95 / 12.0;
    CHECK(std::abs(energy - 2.0) < 1e-9);
    CHECK(tasks.at(9) == 0.0);
    CHECK(tasks.at(13) == 0.0);
}

TEST_CASE("exact multiples of a full slot leave no remainder slot") {
    SimClock hourly{4, 1.0};
    auto tasks = packetize(session(0, 4, 0.0, 10.0, 5.0), hourly, 1.0);
    CHECK(tasks.powers.size() == 2);
}

TEST_CASE("packetization rejects infeasible or negative demand") {
    SimClock hourly{4, 1.0};
    CHECK_THROWS_AS(packetize(session(0, 2, 0.0, 10.5, 5.0), hourly, 1.0), ScenarioError);
    auto negative = session(0, 2, 5.0, 5.0, 5.0);
    negative.required_energy_kwh = 4.0;
    CHECK_THROWS_AS(packetize(negative, hourly, 1.0), ScenarioError);
}

TEST_CASE("arrival streams conserve energy and sum consistently") {
    FleetDistribution dist;
    dist.rng_seed = 7;
    auto clock = five_minute_day();
    auto fleet = sample_fleet(dist, clock);
    auto groups = make_groups(dist, clock);
    auto stream = build_arrivals(fleet, clock, dist.charging_efficiency, static_cast<int>(groups.size()));
    REQUIRE(stream.per_ev.size() == fleet.size());
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        double energy = 0.0;
        for (double p : stream.per_ev[i].powers) {
            CHECK(p >= 0.0);
            CHECK(p <= fleet[i].max_power_kw + 1e-12);
            energy += p * dist.charging_efficiency * clock.slot_duration_h;
        }
        CHECK(std::abs(energy - fleet[i].task_energy_kwh()) < 1e-9);
        for (int t = 0; t < clock.horizon_slots; ++t) {
            int last = fleet[i].arrival_slot + static_cast<int>(stream.per_ev[i].powers.size());
            if (t < fleet[i].arrival_slot || t >= last) CHECK(stream.per_ev[i].at(t) == 0.0);
        }
    }
    for (int t = 0; t < clock.horizon_slots; ++t) {
        double by_group = 0.0;
        for (const auto& g : stream.per_group) by_group += g[static_cast<std::size_t>(t)];
        CHECK(by_group == stream.total[static_cast<std::size_t>(t)]);
        double by_ev = 0.0;
        for (const auto& ev : stream.per_ev) by_ev += ev.at(t);
        CHECK(by_ev == doctest::Approx(stream.total[static_cast<std::size_t>(t)]).epsilon(1e-12));
    }
}

TEST_CASE("synthetic carbon trace follows the sinusoid") {
    SyntheticCarbon syn{0.4, 0.2, 6.0};
    auto clock = five_minute_day();
    auto trace = load_carbon_trace(syn, clock);
    REQUIRE(trace.intensity.size() == 288);
    // sin(2 pi (h - 6) / 24) = -1 at h = 0, so the minimum 0.2 sits at slot 0.
    CHECK(trace.at(0) == doctest::Approx(0.2));
    CHECK(trace.at(144) == doctest::Approx(0.6));
    for (double w : trace.intensity) CHECK(w >= 0.2 - 1e-12);
    CHECK_THROWS_AS(load_carbon_trace(SyntheticCarbon{0.1, 0.2, 0.0}, clock), ScenarioError);
}

TEST_CASE("carbon CSV is step-interpolated onto slots") {
    auto clock = five_minute_day();
    std::ostringstream csv;
    csv << "hour,intensity_kg_per_kwh\n";
    for (int h = 0; h < 24; ++h) csv << h << "," << 0.3 + 0.01 * h << "\n";
    std::istringstream in(csv.str());
    auto trace = parse_carbon_csv(in, clock);
    REQUIRE(trace.intensity.size() == 288);
    for (int t = 0; t < 288; ++t) CHECK(trace.at(t) == doctest::Approx(0.3 + 0.01 * (t / 12)));

    std::istringstream constant("hour,intensity_kg_per_kwh\n0,0.5\n");
    SimClock hourly{5, 1.0};
    CHECK_THROWS_AS(parse_carbon_csv(constant, hourly), ScenarioError);
    std::istringstream constant2("hour,intensity_kg_per_kwh\n0,0.5\n");
    auto held = parse_carbon_csv(constant2, hourly, TraceExtension::hold);
    for (double w : held.intensity) CHECK(w == 0.5);

    std::istringstream two("hour,intensity_kg_per_kwh\n0,0.5\n1,0.7\n");
    auto wrapped = parse_carbon_csv(two, hourly, TraceExtension::wrap);
    CHECK(wrapped.intensity == std::vector<double>{0.5, 0.7, 0.5, 0.7, 0.5});
}

TEST_CASE("malformed carbon CSVs are rejected") {
    auto clock = five_minute_day();
    std::istringstream bad_header("time,value\n0,0.5\n");
    CHECK_THROWS_AS(parse_carbon_csv(bad_header, clock, TraceExtension::hold), ScenarioError);
    std::istringstream negative("hour,intensity_kg_per_kwh\n0,-0.5\n");
    CHECK_THROWS_AS(parse_carbon_csv(negative, clock, TraceExtension::hold), ScenarioError);
    std::istringstream text("hour,intensity_kg_per_kwh\n0,abc\n");
    CHECK_THROWS_AS(parse_carbon_csv(text, clock, TraceExtension::hold), ScenarioError);
    std::istringstream empty("hour,intensity_kg_per_kwh\n");
    CHECK_THROWS_AS(parse_carbon_csv(empty, clock, TraceExtension::hold), ScenarioError);
}

TEST_CASE("fleet CSV round trip") {
    FleetDistribution dist;
    dist.fleet_size = 12;
    auto fleet = sample_fleet(dist, five_minute_day());
    std::stringstream buf;
    write_fleet_csv(buf, fleet);
    auto back = read_fleet_csv(buf);
    REQUIRE(back.size() == fleet.size());
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        CHECK(back[i].arrival_slot == fleet[i].arrival_slot);
        CHECK(back[i].group_index == fleet[i].group_index);
        CHECK(back[i].initial_energy_kwh == doctest::Approx(fleet[i].initial_energy_kwh).epsilon(1e-9));
    }
    std::istringstream bad("id,arrival_slot,departure_slot,e_ini,e_req,e_min,e_max,p_max,capacity,group\n"
                           "0,10,5,1,2,0,3,5,4,0\n");
    CHECK_THROWS_AS(read_fleet_csv(bad), ScenarioError);
}
