#include "evflex/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "evflex/scenario.hpp"

namespace evflex {

namespace fs = std::filesystem;

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ReportError(fmt::format("cannot write {}", path.string()));
    return out;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
    auto out = open_out(path);
    writer(out);
    if (!out) throw ReportError(fmt::format("failed writing {}", path.string()));
}

using Table = std::vector<std::vector<std::string>>;

struct Csv {
    std::vector<std::string> header;
    Table rows;

    std::size_t column(const std::string& name, const fs::path& source) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ReportError(fmt::format("{}: missing column {}", source.string(), name));
        return static_cast<std::size_t>(it - header.begin());
    }
};

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

Csv read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ReportError(fmt::format("incomplete run directory: {} is missing", path.string()));
    Csv csv;
    std::string line;
    if (!std::getline(in, line)) throw ReportError(fmt::format("{} has no header", path.string()));
    csv.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) csv.rows.push_back(split(line));
    return csv;
}

double to_double(const std::string& s, const fs::path& source) {
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw ReportError(fmt::format("{}: '{}' is not a number", source.string(), s));
    }
}

double bundle_slot_hours(const fs::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) return 1.0 / 12.0;
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ReportError(fmt::format("{}: config.json is not valid JSON", dir.string()));
    auto clock = doc.find("clock");
    if (clock == doc.end() || !clock->contains("slot_duration_min")) return 1.0 / 12.0;
    return clock->at("slot_duration_min").get<double>() / 60.0;
}

const char* const kRunFiles[] = {"metrics.csv", "interval.csv", "dispatch.csv", "queue.csv"};

bool is_run_bundle(const fs::path& dir) { return fs::is_regular_file(dir / "metrics.csv"); }

RunSummary report_run(const fs::path& run, const std::string& label, const fs::path& out_dir) {
    for (const char* f : kRunFiles)
        if (!fs::is_regular_file(run / f))
            throw ReportError(fmt::format("incomplete run directory {}: {} is missing", run.string(), f));
    const double dt = bundle_slot_hours(run);

    Csv interval = read_csv(run / "interval.csv");
    auto c_slot = interval.column("slot", run / "interval.csv");
    auto c_lo = interval.column("p_lower", run / "interval.csv");
    auto c_up = interval.column("p_upper", run / "interval.csv");
    write_file(out_dir / (label + "_flexibility.csv"), [&](std::ostream& out) {
        out << "slot,hour,cumulative_flexibility_kwh\n";
        double total = 0.0;
        for (const auto& r : interval.rows) {
            int slot = std::stoi(r.at(c_slot));
            total += (to_double(r.at(c_up), run) - to_double(r.at(c_lo), run)) * dt;
            fmt::print(out, "{},{},{}\n", slot, slot * dt, total);
        }
    });

    Csv dispatch = read_csv(run / "dispatch.csv");
    auto d_slot = dispatch.column("slot", run / "dispatch.csv");
    auto d_em = dispatch.column("emission_rate", run / "dispatch.csv");
    write_file(out_dir / (label + "_emission.csv"), [&](std::ostream& out) {
        out << "slot,hour,time_avg_emission_rate\n";
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : dispatch.rows) {
            int slot = std::stoi(r.at(d_slot));
            sum += to_double(r.at(d_em), run);
            ++n;
            fmt::print(out, "{},{},{}\n", slot, slot * dt, sum / static_cast<double>(n));
        }
    });

    Csv queue = read_csv(run / "queue.csv");
    auto q_slot = queue.column("slot", run / "queue.csv");
    auto q_j = queue.column("J", run / "queue.csv");
    auto q_h = queue.column("H", run / "queue.csv");
    auto q_c = queue.column("Qc", run / "queue.csv");
    struct Totals {
        double j = 0.0, h = 0.0, qc = 0.0;
    };
    std::map<int, Totals> per_slot;
    for (const auto& r : queue.rows) {
        auto& t = per_slot[std::stoi(r.at(q_slot))];
        t.j += to_double(r.at(q_j), run);
        t.h += to_double(r.at(q_h), run);
        t.qc = to_double(r.at(q_c), run);
    }
    write_file(out_dir / (label + "_queues.csv"), [&](std::ostream& out) {
        out << "slot,J_total,H_total,Qc\n";
        for (const auto& [slot, t] : per_slot) fmt::print(out, "{},{},{},{}\n", slot, t.j, t.h, t.qc);
    });

    Csv metrics = read_csv(run / "metrics.csv");
    RunSummary s;
    s.label = label;
    if (!metrics.rows.empty()) s.metrics = metrics.rows.front();
    s.metrics.resize(7);
    return s;
}

void write_summary(std::ostream& out, const std::vector<RunSummary>& runs) {
    const std::pair<const char*, std::size_t> rows[] = {
        {"Total flexibility (kWh)", 2}, {"Emission rate (kg/h)", 3}, {"Unfulfilled energy (kWh)", 4},
        {"Performance ratio", 5},       {"Fulfillment ratio", 6},
    };
    auto cell = [](const std::string& v) {
        if (v.empty()) return std::string("-");
        double x = std::stod(v);
        return fmt::format("{:.4g}", x);
    };
    fmt::print(out, "{:<26}", "Method");
    for (const auto& r : runs) fmt::print(out, "{:>14}", r.label);
    out << "\n";
    for (const auto& [name, col] : rows) {
        fmt::print(out, "{:<26}", name);
        for (const auto& r : runs) fmt::print(out, "{:>14}", cell(r.metrics[col]));
        out << "\n";
    }
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const RunMetrics> rows) {
    out << "method,seed,total_flexibility,emission_rate,unfulfilled,perf_ratio,fulfillment_ratio\n";
    for (const auto& m : rows)
        fmt::print(out, "{},{},{},{},{},{},{}\n", m.method, m.seed, m.total_flexibility_kwh, m.emission_rate_kg_per_h,
                   m.unfulfilled_energy_kwh, opt(m.performance_ratio), m.fulfillment_ratio);
}

void write_interval_csv(std::ostream& out, const Trajectories& traj) {
    out << "slot,p_lower,p_upper\n";
    for (const auto& r : traj.slots)
        fmt::print(out, "{},{},{}\n", r.slot, r.interval.lower_total, r.interval.upper_total);
}

void write_dispatch_csv(std::ostream& out, const Trajectories& traj) {
    out << "slot,gamma,p_dispatch,emission_rate\n";
    for (const auto& r : traj.slots) fmt::print(out, "{},{},{},{}\n", r.slot, r.gamma, r.dispatch, r.emission_rate);
}

void write_queue_csv(std::ostream& out, const Trajectories& traj) {
    out << "slot,group,J,H,Qc\n";
    for (const auto& r : traj.slots)
        for (std::size_t k = 0; k < r.queues.charge.size(); ++k)
            fmt::print(out, "{},{},{},{},{}\n", r.slot, k, r.queues.charge[k], r.queues.delay[k], r.queues.carbon);
}

void write_delay_csv(std::ostream& out, const Trajectories& traj) {
    out << "group,max_delay_slots,delay_bound_slots,J_max,H_max\n";
    for (std::size_t k = 0; k < traj.delays.size(); ++k) {
        const auto& d = traj.delays[k];
        fmt::print(out, "{},{},{},{},{}\n", k, d.max_delay, d.bound, d.charge_max, d.delay_max);
    }
}

void write_ev_csv(std::ostream& out, std::span<const EvSession> initial, std::span<const EvSession> final_fleet) {
    if (initial.size() != final_fleet.size())
        throw ReportError(fmt::format("{} initial sessions for {} final ones", initial.size(), final_fleet.size()));
    out << "ev,group,arrival_slot,departure_slot,initial_kwh,required_kwh,max_kwh,final_kwh\n";
    for (std::size_t i = 0; i < initial.size(); ++i) {
        const auto& e = initial[i];
        fmt::print(out, "{},{},{},{},{},{},{},{}\n", e.id, e.group_index, e.arrival_slot, e.departure_slot,
                   e.initial_energy_kwh, e.required_energy_kwh, e.max_energy_kwh, final_fleet[i].current_energy_kwh);
    }
}

void write_run_bundle(const fs::path& dir, const RunResult& result, const std::string& config_json) {
    fs::create_directories(dir);
    const auto& t = result.trajectories;
    write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, std::span(&result.metrics, 1)); });
    write_file(dir / "interval.csv", [&](std::ostream& o) { write_interval_csv(o, t); });
    write_file(dir / "dispatch.csv", [&](std::ostream& o) { write_dispatch_csv(o, t); });
    write_file(dir / "queue.csv", [&](std::ostream& o) { write_queue_csv(o, t); });
    write_file(dir / "delay.csv", [&](std::ostream& o) { write_delay_csv(o, t); });
    write_file(dir / "ev.csv", [&](std::ostream& o) { write_ev_csv(o, result.scenario.fleet, t.final_fleet); });
    write_file(dir / "config.json", [&](std::ostream& o) { o << config_json; });
}

void write_scenario_bundle(const fs::path& dir, const Scenario& scenario, const std::string& config_json) {
    fs::create_directories(dir);
    write_file(dir / "fleet.csv", [&](std::ostream& o) { write_fleet_csv(o, scenario.fleet); });
    write_file(dir / "carbon.csv", [&](std::ostream& o) { write_carbon_csv(o, scenario.carbon, scenario.clock); });
    write_file(dir / "config.json", [&](std::ostream& o) { o << config_json; });
}

void write_sweep_cells_csv(std::ostream& out, SweepParam param, const SweepResult& result) {
    out << "param,value,replication,seed,method,total_flexibility,emission_rate,unfulfilled,perf_ratio,"
           "fulfillment_ratio,error\n";
    for (const auto& c : result.cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        if (c.metrics) {
            const auto& m = *c.metrics;
            fmt::print(out, "{},{},{},{},{},{},{},{},{},{},{}\n", to_string(param), c.value, c.replication, c.seed,
                       m.method, m.total_flexibility_kwh, m.emission_rate_kg_per_h, m.unfulfilled_energy_kwh,
                       opt(m.performance_ratio), m.fulfillment_ratio, err);
        } else {
            fmt::print(out, "{},{},{},{},,,,,,,{}\n", to_string(param), c.value, c.replication, c.seed, err);
        }
    }
}

void write_sweep_summary_csv(std::ostream& out, SweepParam param, const SweepResult& result) {
    out << "param,value,completed,failed,total_flexibility,emission_rate,unfulfilled,perf_ratio,fulfillment_ratio\n";
    for (const auto& r : result.rows) {
        const auto& m = r.mean;
        if (r.completed > 0)
            fmt::print(out, "{},{},{},{},{},{},{},{},{}\n", to_string(param), r.value, r.completed, r.failed,
                       m.total_flexibility_kwh, m.emission_rate_kg_per_h, m.unfulfilled_energy_kwh,
                       opt(m.performance_ratio), m.fulfillment_ratio);
        else
            fmt::print(out, "{},{},{},{},,,,,\n", to_string(param), r.value, r.completed, r.failed);
    }
}

void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows) {
    out << "fleet_size,mean_decision_s,max_decision_s,opi_s\n";
    for (const auto& r : rows)
        fmt::print(out, "{},{},{},{}\n", r.fleet_size, r.mean_decision_s, r.max_decision_s, opt(r.opi_s));
}

std::vector<RunSummary> report_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ReportError(fmt::format("{} is not a directory", dir.string()));
    std::vector<std::pair<std::string, fs::path>> runs;
    if (is_run_bundle(dir)) {
        Csv metrics = read_csv(dir / "metrics.csv");
        std::string label = metrics.rows.empty() ? std::string("run") : metrics.rows.front().at(0);
        runs.emplace_back(label, dir);
    } else {
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_directory() && is_run_bundle(entry.path()))
                runs.emplace_back(entry.path().filename().string(), entry.path());
        std::sort(runs.begin(), runs.end());
    }
    if (runs.empty()) throw ReportError(fmt::format("incomplete run directory {}: no metrics.csv found", dir.string()));

    fs::path out_dir = dir / "report";
    fs::create_directories(out_dir);
    std::vector<RunSummary> out;
    for (const auto& [label, path] : runs) out.push_back(report_run(path, label, out_dir));
    write_file(out_dir / "summary.txt", [&](std::ostream& o) { write_summary(o, out); });
    return out;
}

}  // namespace evflex
