#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace evflex {

/// Raised for invalid scenario inputs (bad distributions, malformed files,
/// infeasible sessions).
class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimClock {
    int horizon_slots = 288;
    double slot_duration_h = 1.0 / 12.0;

    void validate() const;
};

/// One vehicle's charging contract plus its evolving battery state.
/// Slot indices are 0-based; the vehicle is in the station for
/// arrival_slot <= t < departure_slot.
struct EvSession {
    int id = 0;
    int arrival_slot = 0;
    int departure_slot = 0;
    double initial_energy_kwh = 0.0;
    double required_energy_kwh = 0.0;
    double min_energy_kwh = 0.0;
    double max_energy_kwh = 0.0;
    double max_power_kw = 0.0;
    double capacity_kwh = 0.0;
    int group_index = 0;
    double current_energy_kwh = 0.0;

    int duration_slots() const { return departure_slot - arrival_slot; }
    bool in_station(int slot) const { return slot >= arrival_slot && slot < departure_slot; }
    double task_energy_kwh() const { return required_energy_kwh - initial_energy_kwh; }

    void validate() const;
};

struct GroupSpec {
    int index = 0;
    int duration_slots = 0;
    std::vector<int> member_ids;
};

struct BatteryType {
    double capacity_kwh = 0.0;
    double max_power_kw = 0.0;
};

struct FleetDistribution {
    double arrival_mean_h = 9.0;
    double arrival_std_h = 1.2;
    double departure_mean_h = 18.0;
    double departure_std_h = 1.2;
    double initial_soc_mean = 0.4;
    double initial_soc_std = 0.1;
    double required_soc = 0.7;
    double max_soc = 0.9;
    double min_soc = 0.0;
    double charging_efficiency = 0.95;
    std::vector<BatteryType> battery_menu{{60.0, 10.0}, {40.0, 6.6}, {24.0, 3.3}};
    int fleet_size = 100;
    std::uint64_t rng_seed = 1;
    // Shortest and longest group duration; one group per whole hour in between.
    int group_min_duration_h = 4;
    int group_max_duration_h = 12;
    int max_resample_attempts = 100;

    void validate() const;
};

/// Per-EV charging-task stream produced by packetization: powers[j] arrives
/// during slot first_slot + j.
struct EvTasks {
    int ev_id = 0;
    int first_slot = 0;
    std::vector<double> powers;

    double at(int slot) const;
};

struct TaskArrivalStream {
    std::vector<EvTasks> per_ev;                 // indexed like the fleet
    std::vector<std::vector<double>> per_group;  // [group][slot]
    std::vector<double> total;                   // [slot]
};

struct CarbonTrace {
    std::vector<double> intensity;  // kg CO2 per kWh, one value per slot

    double at(int slot) const { return intensity.at(static_cast<std::size_t>(slot)); }
    double max() const;
};

struct SyntheticCarbon {
    double base_kg_per_kwh = 0.2;
    double amplitude_kg_per_kwh = 0.05;
    double phase_h = 19.0;
};

enum class TraceExtension { none, wrap, hold };

struct CsvCarbon {
    std::filesystem::path path;
    TraceExtension extension = TraceExtension::none;
};

using CarbonSource = std::variant<SyntheticCarbon, CsvCarbon>;

/// Hourly groups from the distribution's duration span.
std::vector<GroupSpec> make_groups(const FleetDistribution& dist, const SimClock& clock);

std::vector<EvSession> sample_fleet(const FleetDistribution& dist, const SimClock& clock);

/// Nearest group by duration (ties go to the shorter group). Returns a
/// 0-based group index.
int assign_group(const EvSession& session, std::span<const GroupSpec> groups);

EvTasks packetize(const EvSession& session, const SimClock& clock, double efficiency);

TaskArrivalStream build_arrivals(std::span<const EvSession> fleet, const SimClock& clock,
                                 double efficiency, int group_count);

/// Fills GroupSpec::member_ids from the sessions' group indices.
void populate_groups(std::vector<GroupSpec>& groups, std::span<const EvSession> fleet);

CarbonTrace load_carbon_trace(const CarbonSource& source, const SimClock& clock);
CarbonTrace parse_carbon_csv(std::istream& in, const SimClock& clock,
                             TraceExtension extension = TraceExtension::none);
double synthetic_intensity(const SyntheticCarbon& spec, double hour);

void write_fleet_csv(std::ostream& out, std::span<const EvSession> fleet);
std::vector<EvSession> read_fleet_csv(std::istream& in);
void write_carbon_csv(std::ostream& out, const CarbonTrace& trace, const SimClock& clock);

}  // namespace evflex
