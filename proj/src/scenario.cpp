#include "evflex/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace evflex {

namespace {

constexpr double kSnapTol = 1e-9;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        auto first = cell.find_first_not_of(" \t\r");
        auto last = cell.find_last_not_of(" \t\r");
        cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_double(const std::string& text, int line_no, const char* column) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v))
        throw ScenarioError(fmt::format("line {}: column '{}' is not a number: '{}'", line_no, column, text));
    return v;
}

int parse_int(const std::string& text, int line_no, const char* column) {
    double v = parse_double(text, line_no, column);
    if (v != std::floor(v) || std::abs(v) > 1e9)
        throw ScenarioError(fmt::format("line {}: column '{}' must be an integer: '{}'", line_no, column, text));
    return static_cast<int>(v);
}

int hours_to_slots(double hours, double slot_h) {
    return static_cast<int>(std::lround(hours / slot_h));
}

}  // namespace

void SimClock::validate() const {
    if (horizon_slots < 1) throw ScenarioError("horizon_slots must be >= 1");
    if (!(slot_duration_h > 0.0) || !std::isfinite(slot_duration_h))
        throw ScenarioError("slot_duration_h must be > 0");
}

void EvSession::validate() const {
    if (arrival_slot >= departure_slot)
        throw ScenarioError(fmt::format("EV {}: arrival slot {} not before departure slot {}", id,
                                        arrival_slot, departure_slot));
    if (!(min_energy_kwh <= initial_energy_kwh && initial_energy_kwh <= required_energy_kwh &&
          required_energy_kwh <= max_energy_kwh && max_energy_kwh <= capacity_kwh))
        throw ScenarioError(fmt::format("EV {}: energy levels out of order (min {}, ini {}, req {}, max {}, cap {})",
                                        id, min_energy_kwh, initial_energy_kwh, required_energy_kwh,
                                        max_energy_kwh, capacity_kwh));
    if (!(max_power_kw > 0.0)) throw ScenarioError(fmt::format("EV {}: max power must be > 0", id));
    if (current_energy_kwh < min_energy_kwh - 1e-9 || current_energy_kwh > max_energy_kwh + 1e-9)
        throw ScenarioError(fmt::format("EV {}: current energy {} outside [{}, {}]", id, current_energy_kwh,
                                        min_energy_kwh, max_energy_kwh));
}

void FleetDistribution::validate() const {
    if (!(required_soc > 0.0 && required_soc <= max_soc && max_soc <= 1.0))
        throw ScenarioError("need 0 < required_soc <= max_soc <= 1");
    if (!(charging_efficiency > 0.0 && charging_efficiency <= 1.0))
        throw ScenarioError("charging_efficiency must be in (0, 1]");
    if (!(min_soc >= 0.0 && min_soc <= 0.05 + 1e-12))
        throw ScenarioError("min_soc must lie in [0, 0.05] so sampled initial SoC stays above it");
    if (required_soc - 0.05 < 0.05)
        throw ScenarioError("required_soc must be at least 0.1 to leave room for the initial SoC clamp");
    if (arrival_std_h < 0.0 || departure_std_h < 0.0 || initial_soc_std < 0.0)
        throw ScenarioError("standard deviations must be >= 0");
    if (battery_menu.empty()) throw ScenarioError("battery_menu must not be empty");
    for (const auto& b : battery_menu)
        if (!(b.capacity_kwh > 0.0 && b.max_power_kw > 0.0))
            throw ScenarioError("battery capacity and power must be > 0");
    if (fleet_size < 0) throw ScenarioError("fleet_size must be >= 0");
    if (group_min_duration_h < 1 || group_max_duration_h < group_min_duration_h)
        throw ScenarioError("group duration range must satisfy 1 <= min <= max");
    if (max_resample_attempts < 1) throw ScenarioError("max_resample_attempts must be >= 1");
}

double EvTasks::at(int slot) const {
    int j = slot - first_slot;
    if (j < 0 || j >= static_cast<int>(powers.size())) return 0.0;
    return powers[static_cast<std::size_t>(j)];
}

double CarbonTrace::max() const {
    return intensity.empty() ? 0.0 : *std::max_element(intensity.begin(), intensity.end());
}

std::vector<GroupSpec> make_groups(const FleetDistribution& dist, const SimClock& clock) {
    std::vector<GroupSpec> groups;
    for (int h = dist.group_min_duration_h; h <= dist.group_max_duration_h; ++h) {
        GroupSpec g;
        g.index = static_cast<int>(groups.size());
        g.duration_slots = hours_to_slots(h, clock.slot_duration_h);
        if (!groups.empty() && g.duration_slots <= groups.back().duration_slots)
            throw ScenarioError("slot duration too coarse: group durations collapse");
        groups.push_back(g);
    }
    return groups;
}

int assign_group(const EvSession& session, std::span<const GroupSpec> groups) {
    if (groups.empty()) throw ScenarioError("no groups defined");
    int d = session.duration_slots();
    if (d < groups.front().duration_slots || d > groups.back().duration_slots)
        throw ScenarioError(fmt::format("EV {}: duration {} slots outside group span [{}, {}]", session.id, d,
                                        groups.front().duration_slots, groups.back().duration_slots));
    int best = 0;
    int best_gap = std::abs(d - groups[0].duration_slots);
    for (std::size_t k = 1; k < groups.size(); ++k) {
        int gap = std::abs(d - groups[k].duration_slots);
        if (gap < best_gap) {
            best = static_cast<int>(k);
            best_gap = gap;
        }
    }
    return best;
}

EvTasks packetize(const EvSession& session, const SimClock& clock, double efficiency) {
    double task = session.task_energy_kwh();
    if (task < 0.0) throw ScenarioError(fmt::format("EV {}: negative task energy {}", session.id, task));
    EvTasks out;
    out.ev_id = session.id;
    out.first_slot = session.arrival_slot;
    if (task == 0.0) return out;

    double slot_power = task / (efficiency * clock.slot_duration_h);
    double eta = slot_power / session.max_power_kw;
    double nearest = std::round(eta);
    if (std::abs(eta - nearest) < kSnapTol) eta = nearest;
    auto full = static_cast<int>(std::floor(eta));
    auto needed = static_cast<int>(std::ceil(eta));
    if (session.arrival_slot + needed > session.departure_slot)
        throw ScenarioError(fmt::format("EV {}: demand needs {} slots but stay is {}", session.id, needed,
                                        session.duration_slots()));
    out.powers.assign(static_cast<std::size_t>(full), session.max_power_kw);
    double remainder = slot_power - full * session.max_power_kw;
    if (needed > full && remainder > 0.0) out.powers.push_back(remainder);
    return out;
}

TaskArrivalStream build_arrivals(std::span<const EvSession> fleet, const SimClock& clock, double efficiency,
                                 int group_count) {
    TaskArrivalStream s;
    auto T = static_cast<std::size_t>(clock.horizon_slots);
    s.total.assign(T, 0.0);
    s.per_group.assign(static_cast<std::size_t>(group_count), std::vector<double>(T, 0.0));
    for (const auto& ev : fleet) {
        if (ev.group_index < 0 || ev.group_index >= group_count)
            throw ScenarioError(fmt::format("EV {}: group {} out of range", ev.id, ev.group_index));
        EvTasks tasks = packetize(ev, clock, efficiency);
        for (std::size_t j = 0; j < tasks.powers.size(); ++j) {
            auto t = static_cast<std::size_t>(tasks.first_slot) + j;
            if (t >= T) break;
            s.per_group[static_cast<std::size_t>(ev.group_index)][t] += tasks.powers[j];
        }
        s.per_ev.push_back(std::move(tasks));
    }
    // Sum the group streams (not the EV streams) so the total matches them exactly.
    for (std::size_t t = 0; t < T; ++t)
        for (const auto& g : s.per_group) s.total[t] += g[t];
    return s;
}

void populate_groups(std::vector<GroupSpec>& groups, std::span<const EvSession> fleet) {
    for (auto& g : groups) g.member_ids.clear();
    for (const auto& ev : fleet) groups.at(static_cast<std::size_t>(ev.group_index)).member_ids.push_back(ev.id);
}

std::vector<EvSession> sample_fleet(const FleetDistribution& dist, const SimClock& clock) {
    dist.validate();
    clock.validate();
    if (dist.fleet_size == 0) throw ScenarioError("fleet_size must be > 0");
    auto groups = make_groups(dist, clock);
    int min_d = groups.front().duration_slots;
    int max_d = groups.back().duration_slots;

    std::mt19937_64 rng(dist.rng_seed);
    std::normal_distribution<double> arrival(dist.arrival_mean_h, dist.arrival_std_h);
    std::normal_distribution<double> departure(dist.departure_mean_h, dist.departure_std_h);
    std::normal_distribution<double> soc(dist.initial_soc_mean, dist.initial_soc_std);
    std::uniform_int_distribution<std::size_t> battery(0, dist.battery_menu.size() - 1);

    std::vector<EvSession> fleet;
    fleet.reserve(static_cast<std::size_t>(dist.fleet_size));
    for (int id = 0; id < dist.fleet_size; ++id) {
        bool accepted = false;
        for (int attempt = 0; attempt < dist.max_resample_attempts && !accepted; ++attempt) {
            EvSession ev;
            ev.id = id;
            ev.arrival_slot = hours_to_slots(arrival(rng), clock.slot_duration_h);
            ev.departure_slot = hours_to_slots(departure(rng), clock.slot_duration_h);
            double s0 = std::clamp(soc(rng), 0.05, dist.required_soc - 0.05);
            const BatteryType& b = dist.battery_menu[battery(rng)];
            if (ev.arrival_slot < 0 || ev.departure_slot > clock.horizon_slots) continue;
            int d = ev.duration_slots();
            if (d < min_d || d > max_d) continue;
            ev.capacity_kwh = b.capacity_kwh;
            ev.max_power_kw = b.max_power_kw;
            ev.initial_energy_kwh = s0 * b.capacity_kwh;
            ev.required_energy_kwh = dist.required_soc * b.capacity_kwh;
            ev.max_energy_kwh = dist.max_soc * b.capacity_kwh;
            ev.min_energy_kwh = dist.min_soc * b.capacity_kwh;
            ev.current_energy_kwh = ev.initial_energy_kwh;
            ev.group_index = assign_group(ev, groups);
            try {
                packetize(ev, clock, dist.charging_efficiency);
            } catch (const ScenarioError&) {
                continue;
            }
            fleet.push_back(ev);
            accepted = true;
        }
        if (!accepted)
            throw ScenarioError(fmt::format("EV {}: no feasible session after {} attempts; distribution "
                                            "incompatible with group range or horizon",
                                            id, dist.max_resample_attempts));
    }
    return fleet;
}

double synthetic_intensity(const SyntheticCarbon& spec, double hour) {
    constexpr double two_pi = 6.283185307179586476925;
    return spec.base_kg_per_kwh + spec.amplitude_kg_per_kwh * std::sin(two_pi * (hour - spec.phase_h) / 24.0);
}

CarbonTrace parse_carbon_csv(std::istream& in, const SimClock& clock, TraceExtension extension) {
    std::string line;
    int line_no = 0;
    std::vector<double> hours;
    std::vector<double> values;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto cells = split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            if (cells.size() != 2 || cells[0] != "hour" || cells[1] != "intensity_kg_per_kwh")
                throw ScenarioError(fmt::format("line {}: expected header 'hour,intensity_kg_per_kwh'", line_no));
            continue;
        }
        if (cells.size() != 2) throw ScenarioError(fmt::format("line {}: expected 2 columns", line_no));
        double h = parse_double(cells[0], line_no, "hour");
        double w = parse_double(cells[1], line_no, "intensity_kg_per_kwh");
        if (h < 0.0) throw ScenarioError(fmt::format("line {}: negative hour", line_no));
        if (!(w > 0.0)) throw ScenarioError(fmt::format("line {}: intensity must be > 0", line_no));
        if (!hours.empty() && h <= hours.back())
            throw ScenarioError(fmt::format("line {}: hours must be strictly increasing", line_no));
        hours.push_back(h);
        values.push_back(w);
    }
    if (values.empty()) throw ScenarioError("carbon CSV has no data rows");

    double interval = hours.size() > 1 ? hours[1] - hours[0] : clock.slot_duration_h;
    double start = hours.front();
    double end = hours.back() + interval;
    double period = end - start;

    CarbonTrace trace;
    trace.intensity.reserve(static_cast<std::size_t>(clock.horizon_slots));
    for (int t = 0; t < clock.horizon_slots; ++t) {
        double h = t * clock.slot_duration_h + 1e-9;
        if (h < start) throw ScenarioError(fmt::format("carbon CSV starts at hour {} after slot {}", start, t));
        if (h >= end) {
            switch (extension) {
                case TraceExtension::none:
                    throw ScenarioError(fmt::format("carbon CSV covers {} h but the horizon needs {} h", period,
                                                    clock.horizon_slots * clock.slot_duration_h));
                case TraceExtension::hold:
                    trace.intensity.push_back(values.back());
                    continue;
                case TraceExtension::wrap:
                    h = start + std::fmod(h - start, period);
                    break;
            }
        }
        auto it = std::upper_bound(hours.begin(), hours.end(), h);
        trace.intensity.push_back(values[static_cast<std::size_t>(it - hours.begin()) - 1]);
    }
    return trace;
}

CarbonTrace load_carbon_trace(const CarbonSource& source, const SimClock& clock) {
    clock.validate();
    if (const auto* syn = std::get_if<SyntheticCarbon>(&source)) {
        CarbonTrace trace;
        for (int t = 0; t < clock.horizon_slots; ++t) {
            double w = synthetic_intensity(*syn, t * clock.slot_duration_h);
            if (!(w > 0.0))
                throw ScenarioError(fmt::format("synthetic carbon intensity {} at slot {} is not positive", w, t));
            trace.intensity.push_back(w);
        }
        return trace;
    }
    const auto& csv = std::get<CsvCarbon>(source);
    std::ifstream in(csv.path);
    if (!in) throw ScenarioError(fmt::format("cannot open carbon CSV '{}'", csv.path.string()));
    return parse_carbon_csv(in, clock, csv.extension);
}

void write_fleet_csv(std::ostream& out, std::span<const EvSession> fleet) {
    out << "id,arrival_slot,departure_slot,e_ini,e_req,e_min,e_max,p_max,capacity,group\n";
    for (const auto& ev : fleet)
        fmt::print(out, "{},{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{}\n", ev.id, ev.arrival_slot,
                   ev.departure_slot, ev.initial_energy_kwh, ev.required_energy_kwh, ev.min_energy_kwh,
                   ev.max_energy_kwh, ev.max_power_kw, ev.capacity_kwh, ev.group_index);
}

std::vector<EvSession> read_fleet_csv(std::istream& in) {
    static const char* columns[] = {"id",    "arrival_slot", "departure_slot", "e_ini",    "e_req",
                                    "e_min", "e_max",        "p_max",          "capacity", "group"};
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    std::vector<EvSession> fleet;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto cells = split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            bool ok = cells.size() == std::size(columns);
            for (std::size_t c = 0; ok && c < cells.size(); ++c) ok = cells[c] == columns[c];
            if (!ok) throw ScenarioError(fmt::format("line {}: unexpected fleet CSV header", line_no));
            continue;
        }
        if (cells.size() != std::size(columns))
            throw ScenarioError(fmt::format("line {}: expected {} columns", line_no, std::size(columns)));
        EvSession ev;
        ev.id = parse_int(cells[0], line_no, columns[0]);
        ev.arrival_slot = parse_int(cells[1], line_no, columns[1]);
        ev.departure_slot = parse_int(cells[2], line_no, columns[2]);
        ev.initial_energy_kwh = parse_double(cells[3], line_no, columns[3]);
        ev.required_energy_kwh = parse_double(cells[4], line_no, columns[4]);
        ev.min_energy_kwh = parse_double(cells[5], line_no, columns[5]);
        ev.max_energy_kwh = parse_double(cells[6], line_no, columns[6]);
        ev.max_power_kw = parse_double(cells[7], line_no, columns[7]);
        ev.capacity_kwh = parse_double(cells[8], line_no, columns[8]);
        ev.group_index = parse_int(cells[9], line_no, columns[9]);
        ev.current_energy_kwh = ev.initial_energy_kwh;
        if (ev.id != static_cast<int>(fleet.size()))
            throw ScenarioError(fmt::format("line {}: ids must run 0..N-1 in order", line_no));
        try {
            ev.validate();
        } catch (const ScenarioError& e) {
            throw ScenarioError(fmt::format("line {}: {}", line_no, e.what()));
        }
        fleet.push_back(ev);
    }
    if (!header_seen) throw ScenarioError("fleet CSV is empty");
    return fleet;
}

void write_carbon_csv(std::ostream& out, const CarbonTrace& trace, const SimClock& clock) {
    out << "hour,intensity_kg_per_kwh\n";
    for (std::size_t t = 0; t < trace.intensity.size(); ++t)
        fmt::print(out, "{:.10g},{:.10g}\n", static_cast<double>(t) * clock.slot_duration_h, trace.intensity[t]);
}

}  // namespace evflex
