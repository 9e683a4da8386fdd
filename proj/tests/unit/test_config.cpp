#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "evflex/config.hpp"

using namespace evflex;
namespace fs = std::filesystem;

namespace {

ExitCode code_of(std::string_view text, std::vector<std::string> overrides = {}, const fs::path& base = {}) {
    try {
        parse_config(text, base, overrides);
    } catch (const ConfigError& e) {
        return e.code();
    }
    return ExitCode::ok;
}

std::string message_of(std::string_view text, std::vector<std::string> overrides = {}) {
    try {
        parse_config(text, {}, overrides);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

fs::path scratch_dir() {
    fs::path dir = fs::temp_directory_path() / "evflex_test_config";
    fs::create_directories(dir);
    return dir;
}

constexpr std::string_view kMinimal = R"({"schema_version": 1})";

}  // namespace

TEST_CASE("a minimal config keeps every default") {
    RunConfig cfg = parse_config(kMinimal);
    CHECK(dump_config(cfg) == dump_config(RunConfig{}));
    CHECK(cfg.online.flexibility_weight == 6000.0);
    CHECK(cfg.online.rate_cap_kg_per_h == 30.0);
    CHECK(cfg.scenario.clock.horizon_slots == 288);
    CHECK(cfg.scenario.clock.slot_duration_h == doctest::Approx(1.0 / 12.0));
    CHECK(cfg.scenario.fleet.fleet_size == 100);
}

TEST_CASE("overrides accept dotted paths and unique leaf names") {
    std::vector<std::string> dotted{"online.V=12000"};
    CHECK(parse_config(kMinimal, {}, dotted).online.flexibility_weight == 12000.0);
    std::vector<std::string> leaf{"V=12000", "method=b3", "feedback=false"};
    RunConfig cfg = parse_config(kMinimal, {}, leaf);
    CHECK(cfg.online.flexibility_weight == 12000.0);
    CHECK(cfg.method == Method::b3);
    CHECK_FALSE(cfg.feedback);
    // A top-level key wins over a nested leaf of the same name.
    std::vector<std::string> nested{"qp.method=interior_point", "method=opi"};
    cfg = parse_config(kMinimal, {}, nested);
    CHECK(cfg.method == Method::opi);
    CHECK(dump_config(cfg).find("\"interior_point\"") != std::string::npos);
}

TEST_CASE("a negative rate cap names the field") {
    std::string text = "{\n  \"schema_version\": 1,\n  \"online\": {\"rate_cap_kg_per_h\": -5}\n}";
    CHECK(code_of(text) == ExitCode::invalid_value);
    auto msg = message_of(text);
    CHECK(msg.find("online.rate_cap_kg_per_h") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(code_of(kMinimal, {"online.rate_cap_kg_per_h=-5"}) == ExitCode::invalid_value);
}

TEST_CASE("unknown keys are rejected") {
    CHECK(code_of(R"({"schema_version": 1, "onlne": {}})") == ExitCode::unknown_key);
    CHECK(code_of(R"({"schema_version": 1, "online": {"gamma": 1}})") == ExitCode::unknown_key);
    CHECK(code_of(kMinimal, {"online.Vee=3"}) == ExitCode::unknown_key);
    CHECK(code_of(kMinimal, {"r=5"}) == ExitCode::unknown_key);

}

TEST_CASE("malformed documents and wrong versions are rejected") {
    CHECK(code_of(R"({"schema_version": 1,)") == ExitCode::malformed);
    CHECK(code_of("[]") == ExitCode::malformed);
    CHECK(code_of("{}") == ExitCode::malformed);
    CHECK(code_of(R"({"schema_version": 2})") == ExitCode::malformed);
}

TEST_CASE("wrong types and out-of-range values are invalid") {
    CHECK(code_of(R"({"schema_version": 1, "online": {"V": "big"}})") == ExitCode::invalid_value);
    CHECK(code_of(R"({"schema_version": 1, "method": "greedy"})") == ExitCode::invalid_value);
    CHECK(code_of(R"({"schema_version": 1, "clock": {"horizon_slots": 0}})") == ExitCode::invalid_value);
    CHECK(code_of(R"({"schema_version": 1, "dispatch": {"mode": "replay"}})") == ExitCode::invalid_value);
    CHECK(code_of(R"({"schema_version": 1, "fleet": {"required_soc": 1.5}})") == ExitCode::invalid_value);
}

TEST_CASE("missing files get their own code") {
    CHECK_THROWS_AS(load_config(scratch_dir() / "absent.json"), ConfigError);
    try {
        load_config(scratch_dir() / "absent.json");
    } catch (const ConfigError& e) {
        CHECK(e.code() == ExitCode::missing_file);
    }
    CHECK(code_of(R"({"schema_version": 1, "carbon": {"source": "csv", "path": "absent.csv"}})", {}, scratch_dir()) ==
          ExitCode::missing_file);
    CHECK(code_of(R"({"schema_version": 1, "dispatch": {"mode": "replay", "trace_path": "absent.csv"}})", {},
                  scratch_dir()) == ExitCode::missing_file);
}

TEST_CASE("file paths resolve against the config directory") {
    fs::path dir = scratch_dir();
    {
        std::ofstream trace(dir / "ratios.csv");
        trace << "slot,gamma\n0,0.25\n1,0.75\n";
        std::ofstream cfg(dir / "replay.json");
        cfg << R"({"schema_version": 1, "clock": {"horizon_slots": 2},
                   "dispatch": {"mode": "replay", "trace_path": "ratios.csv"}})";
    }
    RunConfig cfg = load_config(dir / "replay.json");
    CHECK(cfg.dispatch.mode == DispatchMode::replay);
    CHECK(cfg.dispatch.trace == std::vector<double>{0.25, 0.75});
    CHECK(read_ratio_trace(dir / "ratios.csv") == std::vector<double>{0.25, 0.75});
}

TEST_CASE("dump and parse round-trip") {
    RunConfig cfg;
    cfg.seed = 17;
    cfg.method = Method::mpc;
    cfg.feedback = false;
    cfg.online.carbon_weight = 5.0;
    cfg.online.rate_cap_kg_per_h = 22.5;
    cfg.scenario.fleet.fleet_size = 250;
    cfg.scenario.fleet.battery_menu = {{50.0, 7.0}};
    cfg.scenario.clock.horizon_slots = 96;
    cfg.scenario.clock.slot_duration_h = 0.25;
    cfg.dispatch.mode = DispatchMode::replay;
    cfg.dispatch.trace.assign(96, 0.5);
    cfg.epsilon = 1e-3;
    std::string once = dump_config(cfg);
    RunConfig back = parse_config(once);
    CHECK(dump_config(back) == once);
    CHECK(back.scenario.clock.slot_duration_h == doctest::Approx(0.25));
    CHECK(back.scenario.fleet.battery_menu.size() == 1);
}

TEST_CASE("output root follows the environment") {
    ::setenv("EVFLEX_OUTPUT_ROOT", "/tmp/elsewhere", 1);
    CHECK(default_output_root() == fs::path("/tmp/elsewhere"));
    ::setenv("EVFLEX_OUTPUT_ROOT", "", 1);
    CHECK(default_output_root() == fs::path("runs"));
    ::unsetenv("EVFLEX_OUTPUT_ROOT");
    CHECK(default_output_root() == fs::path("runs"));
}
