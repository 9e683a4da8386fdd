#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evflex/harness.hpp"

namespace evflex {

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every writer prints a header row first, so an empty input yields a
// header-only file. Numbers use the shortest round-trip form, which keeps
// outputs byte-identical across repeated runs.

/// `method,seed,total_flexibility,emission_rate,unfulfilled,perf_ratio,fulfillment_ratio`;
/// perf_ratio is empty when no offline reference was computed.
void write_metrics_csv(std::ostream& out, std::span<const RunMetrics> rows);

/// `slot,p_lower,p_upper`
void write_interval_csv(std::ostream& out, const Trajectories& traj);

/// `slot,gamma,p_dispatch,emission_rate`
void write_dispatch_csv(std::ostream& out, const Trajectories& traj);

/// `slot,group,J,H,Qc`; rows only for methods that keep queues.
void write_queue_csv(std::ostream& out, const Trajectories& traj);

/// `group,max_delay_slots,delay_bound_slots,J_max,H_max`
void write_delay_csv(std::ostream& out, const Trajectories& traj);

/// `ev,group,arrival_slot,departure_slot,initial_kwh,required_kwh,max_kwh,final_kwh`
void write_ev_csv(std::ostream& out, std::span<const EvSession> initial, std::span<const EvSession> final_fleet);

/// Writes metrics.csv, interval.csv, dispatch.csv, queue.csv, delay.csv,
/// ev.csv and config.json into `dir` (created if needed). Timings are left
/// out so the bundle is deterministic.
void write_run_bundle(const std::filesystem::path& dir, const RunResult& result, const std::string& config_json);

/// Scenario bundle: fleet.csv, carbon.csv and config.json.
void write_scenario_bundle(const std::filesystem::path& dir, const Scenario& scenario, const std::string& config_json);

/// `param,value,replication,seed,method,total_flexibility,emission_rate,unfulfilled,perf_ratio,fulfillment_ratio,error`
void write_sweep_cells_csv(std::ostream& out, SweepParam param, const SweepResult& result);

/// `param,value,completed,failed,total_flexibility,emission_rate,unfulfilled,perf_ratio,fulfillment_ratio`
void write_sweep_summary_csv(std::ostream& out, SweepParam param, const SweepResult& result);

/// `fleet_size,mean_decision_s,max_decision_s,opi_s`
void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows);

struct RunSummary {
    std::string label;
    std::vector<std::string> metrics;  // one metrics.csv data row, split
};

/// Post-processes a run bundle, or every run bundle one level below `dir`.
/// Writes into `dir/report/`: `<label>_flexibility.csv` (slot,hour,
/// cumulative_flexibility_kwh), `<label>_emission.csv` (slot,hour,
/// time_avg_emission_rate), `<label>_queues.csv` (slot,J_total,H_total,Qc)
/// and summary.txt with one column per run. The slot length comes from each
/// bundle's config.json. Returns the runs in label order.
std::vector<RunSummary> report_directory(const std::filesystem::path& dir);

}  // namespace evflex
