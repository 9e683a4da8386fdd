#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evflex/benchmarks.hpp"
#include "evflex/dispatch.hpp"
#include "evflex/online.hpp"
#include "evflex/simulation.hpp"

namespace evflex {

enum class Method { proposed, b1, b2, b3, opi, mpc };

std::string to_string(Method m);
Method parse_method(std::string_view name);

/// Counter-based seed split: the same (master, stream) always gives the same
/// seed and different streams are decorrelated.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

inline constexpr std::uint64_t kFleetStream = 1;
inline constexpr std::uint64_t kDispatchStream = 2;

struct ScenarioSpec {
    FleetDistribution fleet;
    SimClock clock;
    CarbonSource carbon = SyntheticCarbon{};
};

struct RunConfig {
    ScenarioSpec scenario;
    Method method = Method::proposed;
    OnlineParams online;  // V, beta, lambda and r; its slot duration follows the clock
    DispatchPolicy dispatch;
    bool feedback = true;
    std::uint64_t seed = 1;
    double epsilon = 1e-4;  // offline uniqueness weight
    QpSettings qp;          // per-slot problem settings

    void validate() const;
    QueueParams queue_params(const Scenario& scenario) const;
};

/// Samples the fleet with the seed derived from the master seed.
Scenario build_scenario(const RunConfig& config);

/// Runs the configured method on an already built scenario. The dispatch
/// ratio seed is derived from the master seed.
Trajectories run_method(const Scenario& scenario, const RunConfig& config);

/// Online drift-plus-penalty loop (quadratic or linear per-slot problem).
Trajectories run_online(const Scenario& scenario, const OnlineParams& params, const DispatchPolicy& policy,
                        bool feedback, bool linear, const QpSettings& settings = {});

struct RunMetrics {
    std::string method;
    std::uint64_t seed = 0;
    double total_flexibility_kwh = 0.0;
    double emission_rate_kg_per_h = 0.0;
    double unfulfilled_energy_kwh = 0.0;
    std::optional<double> performance_ratio;
    double fulfillment_ratio = 1.0;
    std::vector<GroupDelay> delays;
    bool delay_bound_holds = true;
    double mean_decision_s = 0.0;
    double max_decision_s = 0.0;
    double undeliverable_kw = 0.0;
    double abandoned_task_kw = 0.0;
};

/// Metrics from a finished run. `initial_fleet` supplies the initial and
/// required energies; `opi_flexibility_kwh` enables the performance ratio.
RunMetrics compute_metrics(const Trajectories& traj, std::span<const EvSession> initial_fleet,
                           const SimClock& clock, std::optional<double> opi_flexibility_kwh = std::nullopt);

struct RunResult {
    Scenario scenario;
    Trajectories trajectories;
    RunMetrics metrics;
};

/// build_scenario + run_method + compute_metrics. With `with_opi` the OPI
/// reference is solved on the same scenario for the performance ratio.
RunResult run_simulation(const RunConfig& config, bool with_opi = false);

enum class SweepParam { gamma, beta, V, r, fleet_size };

std::string to_string(SweepParam p);
SweepParam parse_sweep_param(std::string_view name);

/// Applies one swept value to a configuration.
void apply_sweep_value(RunConfig& config, SweepParam param, double value);

struct SweepSpec {
    SweepParam param = SweepParam::gamma;
    std::vector<double> values;
    int replications = 10;
    RunConfig base;
    unsigned threads = 0;  // 0: hardware concurrency
    bool with_opi = false;
};

struct SweepCell {
    double value = 0.0;
    int replication = 0;
    std::uint64_t seed = 0;
    std::optional<RunMetrics> metrics;
    std::string error;
};

struct SweepRow {
    double value = 0.0;
    int completed = 0;
    int failed = 0;
    RunMetrics mean;  // averaged over completed replications
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepRow> rows;
};

/// Replication 0 uses the base seed and replication j > 0 uses
/// derive_seed(base seed, j), the same for every value, so cells differ only
/// in the swept parameter.
SweepResult run_sweep(const SweepSpec& spec);

struct TimingRow {
    int fleet_size = 0;
    double mean_decision_s = 0.0;
    double max_decision_s = 0.0;
    std::optional<double> opi_s;
};

std::vector<TimingRow> benchmark_timing(std::span<const int> fleet_sizes, const RunConfig& base,
                                        bool include_opi = false);

}  // namespace evflex
