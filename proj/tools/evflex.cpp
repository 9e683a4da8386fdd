#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "evflex/config.hpp"
#include "evflex/harness.hpp"
#include "evflex/report.hpp"

namespace fs = std::filesystem;
using namespace evflex;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    int verbosity = 1;
};

RunConfig load(const Options& o) {
    if (o.config.empty()) return parse_config(R"({"schema_version": 1})", fs::current_path(), o.overrides);
    return load_config(o.config, o.overrides);
}

fs::path output_dir(const Options& o, const std::string& fallback) {
    return o.out.empty() ? default_output_root() / fallback : fs::path(o.out);
}

void print_metrics(const RunMetrics& m) {
    fmt::print("{} seed {}: flexibility {:.1f} kWh, emission {:.2f} kg/h, unfulfilled {:.2f} kWh, fulfillment {:.4f}",
               m.method, m.seed, m.total_flexibility_kwh, m.emission_rate_kg_per_h, m.unfulfilled_energy_kwh,
               m.fulfillment_ratio);
    if (m.performance_ratio) fmt::print(", performance ratio {:.3f}", *m.performance_ratio);
    fmt::print("\n");
}

int cmd_gen_scenario(const Options& o, std::optional<std::uint64_t> seed) {
    RunConfig cfg = load(o);
    if (seed) cfg.seed = *seed;
    Scenario sc = build_scenario(cfg);
    fs::path dir = output_dir(o, fmt::format("scenario-seed{}", cfg.seed));
    write_scenario_bundle(dir, sc, dump_config(cfg));
    if (o.verbosity > 0) fmt::print("{} EVs, {} groups, {} slots -> {}\n", sc.fleet.size(), sc.groups.size(),
                                    sc.clock.horizon_slots, dir.string());
    return 0;
}

int cmd_run(const Options& o, const std::string& method, std::optional<std::uint64_t> seed, bool no_feedback,
            bool no_reference) {
    RunConfig cfg = load(o);
    if (!method.empty()) {
        try {
            cfg.method = parse_method(method);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(ExitCode::invalid_value, e.what());
        }
    }
    if (seed) cfg.seed = *seed;
    if (no_feedback) cfg.feedback = false;
    RunResult res = run_simulation(cfg, !no_reference);
    fs::path dir = output_dir(o, fmt::format("{}-seed{}", to_string(cfg.method), cfg.seed));
    write_run_bundle(dir, res, dump_config(cfg));
    if (o.verbosity > 0) {
        print_metrics(res.metrics);
        if (o.verbosity > 1)
            fmt::print("decision time mean {:.3g} s, max {:.3g} s\n", res.metrics.mean_decision_s,
                       res.metrics.max_decision_s);
        fmt::print("-> {}\n", dir.string());
    }
    if (!res.metrics.delay_bound_holds) {
        fmt::print(stderr, "invariant failed: a group's worst FIFO delay exceeds its queue-based bound\n");
        return static_cast<int>(ExitCode::runtime_failure);
    }
    return 0;
}

std::vector<double> parse_values(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(ExitCode::invalid_value, fmt::format("--values: '{}' is not a number", item));
        }
    }
    if (out.empty()) throw ConfigError(ExitCode::invalid_value, "--values: the list is empty");
    return out;
}

int cmd_sweep(const Options& o, const std::string& param, const std::string& values, int reps, unsigned threads,
              bool with_opi) {
    SweepSpec spec;
    spec.base = load(o);
    try {
        spec.param = parse_sweep_param(param);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(ExitCode::invalid_value, e.what());
    }
    spec.values = parse_values(values);
    if (reps < 1) throw ConfigError(ExitCode::invalid_value, "--reps must be >= 1");
    spec.replications = reps;
    spec.threads = threads;
    spec.with_opi = with_opi;
    SweepResult res = run_sweep(spec);
    fs::path dir = output_dir(o, fmt::format("sweep-{}", param));
    fs::create_directories(dir);
    {
        std::ofstream cells(dir / "cells.csv", std::ios::binary);
        write_sweep_cells_csv(cells, spec.param, res);
        std::ofstream summary(dir / "summary.csv", std::ios::binary);
        write_sweep_summary_csv(summary, spec.param, res);
        std::ofstream cfg(dir / "config.json", std::ios::binary);
        cfg << dump_config(spec.base);
    }
    int failed = 0;
    for (const auto& r : res.rows) {
        failed += r.failed;
        if (o.verbosity > 0)
            fmt::print("{} = {}: {} runs, flexibility {:.1f} kWh, emission {:.2f} kg/h, unfulfilled {:.2f} kWh\n",
                       param, r.value, r.completed, r.mean.total_flexibility_kwh, r.mean.emission_rate_kg_per_h,
                       r.mean.unfulfilled_energy_kwh);
    }
    if (o.verbosity > 0) fmt::print("-> {}\n", dir.string());
    if (failed > 0) {
        fmt::print(stderr, "{} sweep cells failed; see cells.csv\n", failed);
        return static_cast<int>(ExitCode::runtime_failure);
    }
    return 0;
}

int cmd_timing(const Options& o, const std::string& sizes, bool with_opi) {
    RunConfig base = load(o);
    std::vector<int> n;
    for (double v : parse_values(sizes)) {
        if (v < 0 || v != static_cast<int>(v)) throw ConfigError(ExitCode::invalid_value, "--sizes: expected counts");
        n.push_back(static_cast<int>(v));
    }
    auto rows = benchmark_timing(n, base, with_opi);
    fs::path dir = output_dir(o, "timing");
    fs::create_directories(dir);
    std::ofstream csv(dir / "timing.csv", std::ios::binary);
    write_timing_csv(csv, rows);
    if (o.verbosity > 0) {
        for (const auto& r : rows) {
            fmt::print("{} EVs: mean {:.3g} s, max {:.3g} s per decision", r.fleet_size, r.mean_decision_s,
                       r.max_decision_s);
            if (r.opi_s) fmt::print(", offline {:.3g} s", *r.opi_s);
            fmt::print("\n");
        }
        fmt::print("-> {}\n", dir.string());
    }
    return 0;
}

int cmd_report(const Options& o, const std::string& dir) {
    report_directory(dir);
    if (o.verbosity > 0) {
        std::ifstream summary(fs::path(dir) / "report" / "summary.txt");
        std::cout << summary.rdbuf();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Carbon-aware real-time EV flexibility simulator"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    bool verbose = false;
    bool quiet = false;
    app.add_flag("-v,--verbose", verbose, "Print extra detail");
    app.add_flag("-q,--quiet", quiet, "Print nothing on success");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--set", o.overrides, "Config override key=value (repeatable)");
    };

    std::optional<std::uint64_t> seed;
    std::string method;
    bool no_feedback = false;
    bool no_reference = false;
    std::string param, values, sizes, report_dir;
    int reps = 10;
    unsigned threads = 0;
    bool with_opi = false;

    auto* gen = app.add_subcommand("gen-scenario", "Sample a fleet and carbon trace");
    add_common(gen);
    gen->add_option("--seed", seed, "Master seed");

    auto* run = app.add_subcommand("run", "Run one method on one seed");
    add_common(run);
    run->add_option("--method", method, "proposed, b1, b2, b3, opi or mpc");
    run->add_option("--seed", seed, "Master seed");
    run->add_flag("--no-feedback", no_feedback, "Advance queues on the reported bounds instead of the dispatch");
    run->add_flag("--no-reference", no_reference, "Skip the offline reference (no performance ratio)");

    auto* sweep = app.add_subcommand("sweep", "Sweep one parameter over replicated seeds");
    add_common(sweep);
    sweep->add_option("--param", param, "gamma, beta, V, r or fleet_size")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--reps", reps, "Replications per value");
    sweep->add_option("--threads", threads, "Worker threads (0: all cores)");
    sweep->add_flag("--with-opi", with_opi, "Compute performance ratios");

    auto* timing = app.add_subcommand("timing", "Per-decision wall time against fleet size");
    add_common(timing);
    timing->add_option("--sizes", sizes, "Comma-separated fleet sizes")->required();
    timing->add_flag("--opi", with_opi, "Also time the offline problem");

    auto* report = app.add_subcommand("report", "Plot-ready series and a summary table from run directories");
    report->add_option("dir", report_dir, "Run directory, or a directory of runs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }
    o.verbosity = quiet ? 0 : (verbose ? 2 : 1);

    try {
        if (*gen) return cmd_gen_scenario(o, seed);
        if (*run) return cmd_run(o, method, seed, no_feedback, no_reference);
        if (*sweep) return cmd_sweep(o, param, values, reps, threads, with_opi);
        if (*timing) return cmd_timing(o, sizes, with_opi);
        if (*report) return cmd_report(o, report_dir);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return static_cast<int>(e.code());
    } catch (const ReportError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return static_cast<int>(ExitCode::missing_file);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return static_cast<int>(ExitCode::runtime_failure);
    }
    return static_cast<int>(ExitCode::usage);
}
