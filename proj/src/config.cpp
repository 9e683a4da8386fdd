#include "evflex/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace evflex {

namespace {

using nlohmann::json;

/// 1-based line of the first occurrence of `"key"` in the source, 0 if absent.
int line_of(std::string_view text, std::string_view key) {
    std::string quoted = fmt::format("\"{}\"", key);
    auto pos = text.find(quoted);
    if (pos == std::string_view::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Reader {
public:
    explicit Reader(std::string_view text) : text_(text) {}

    [[noreturn]] void fail(ExitCode code, const std::string& path, const std::string& what) const {
        std::string leaf = path.substr(path.rfind('.') + 1);
        int line = line_of(text_, leaf);
        if (line > 0) throw ConfigError(code, fmt::format("{} (line {}): {}", path, line, what));
        throw ConfigError(code, fmt::format("{}: {}", path, what));
    }

    double number(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = obj.at(key);
        if (!v.is_number()) fail(ExitCode::invalid_value, path + key, fmt::format("expected a number, got {}", v.dump()));
        return v.get<double>();
    }

    long long integer(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = obj.at(key);
        if (!v.is_number_integer())
            fail(ExitCode::invalid_value, path + key, fmt::format("expected an integer, got {}", v.dump()));
        return v.get<long long>();
    }

    std::string string(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = obj.at(key);
        if (!v.is_string()) fail(ExitCode::invalid_value, path + key, fmt::format("expected a string, got {}", v.dump()));
        return v.get<std::string>();
    }

    bool boolean(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = obj.at(key);
        if (!v.is_boolean()) fail(ExitCode::invalid_value, path + key, fmt::format("expected true or false, got {}", v.dump()));
        return v.get<bool>();
    }

    double positive(const json& obj, const std::string& key, const std::string& path) const {
        double v = number(obj, key, path);
        if (!(v > 0.0)) fail(ExitCode::invalid_value, path + key, fmt::format("must be > 0, got {}", v));
        return v;
    }

    double nonnegative(const json& obj, const std::string& key, const std::string& path) const {
        double v = number(obj, key, path);
        if (!(v >= 0.0)) fail(ExitCode::invalid_value, path + key, fmt::format("must be >= 0, got {}", v));
        return v;
    }

    double unit(const json& obj, const std::string& key, const std::string& path) const {
        double v = number(obj, key, path);
        if (!(v >= 0.0 && v <= 1.0)) fail(ExitCode::invalid_value, path + key, fmt::format("must lie in [0, 1], got {}", v));
        return v;
    }

private:
    std::string_view text_;
};

std::string to_string(DispatchMode m) {
    switch (m) {
    case DispatchMode::uniform_random: return "uniform_random";
    case DispatchMode::fixed_ratio: return "fixed_ratio";
    case DispatchMode::replay: return "replay";
    }
    return "uniform_random";
}

std::string to_string(TraceExtension e) {
    switch (e) {
    case TraceExtension::none: return "none";
    case TraceExtension::wrap: return "wrap";
    case TraceExtension::hold: return "hold";
    }
    return "none";
}

std::string to_string(QpMethod m) { return m == QpMethod::admm ? "admm" : "interior_point"; }

/// Every key the schema accepts, with defaults. Optional paths are null.
json schema_document(const RunConfig& c) {
    const auto& f = c.scenario.fleet;
    json menu = json::array();
    for (const auto& b : f.battery_menu) menu.push_back({{"capacity_kwh", b.capacity_kwh}, {"max_power_kw", b.max_power_kw}});

    json carbon = {{"source", "synthetic"},
                   {"base_kg_per_kwh", SyntheticCarbon{}.base_kg_per_kwh},
                   {"amplitude_kg_per_kwh", SyntheticCarbon{}.amplitude_kg_per_kwh},
                   {"phase_h", SyntheticCarbon{}.phase_h},
                   {"path", nullptr},
                   {"extension", "none"}};
    if (const auto* s = std::get_if<SyntheticCarbon>(&c.scenario.carbon)) {
        carbon["base_kg_per_kwh"] = s->base_kg_per_kwh;
        carbon["amplitude_kg_per_kwh"] = s->amplitude_kg_per_kwh;
        carbon["phase_h"] = s->phase_h;
    } else {
        const auto& csv = std::get<CsvCarbon>(c.scenario.carbon);
        carbon["source"] = "csv";
        carbon["path"] = csv.path.string();
        carbon["extension"] = to_string(csv.extension);
    }

    return {
        {"schema_version", kConfigSchemaVersion},
        {"seed", c.seed},
        {"method", to_string(c.method)},
        {"feedback", c.feedback},
        {"clock", {{"horizon_slots", c.scenario.clock.horizon_slots},
                   {"slot_duration_min", c.scenario.clock.slot_duration_h * 60.0}}},
        {"fleet", {{"size", f.fleet_size},
                   {"arrival_mean_h", f.arrival_mean_h},
                   {"arrival_std_h", f.arrival_std_h},
                   {"departure_mean_h", f.departure_mean_h},
                   {"departure_std_h", f.departure_std_h},
                   {"initial_soc_mean", f.initial_soc_mean},
                   {"initial_soc_std", f.initial_soc_std},
                   {"required_soc", f.required_soc},
                   {"max_soc", f.max_soc},
                   {"min_soc", f.min_soc},
                   {"charging_efficiency", f.charging_efficiency},
                   {"battery_menu", menu},
                   {"group_min_duration_h", f.group_min_duration_h},
                   {"group_max_duration_h", f.group_max_duration_h},
                   {"max_resample_attempts", f.max_resample_attempts}}},
        {"carbon", carbon},
        {"online", {{"V", c.online.flexibility_weight},
                    {"beta", c.online.carbon_weight},
                    {"lambda", c.online.delay_weight},
                    {"rate_cap_kg_per_h", c.online.rate_cap_kg_per_h}}},
        {"dispatch", {{"mode", to_string(c.dispatch.mode)},
                      {"fixed_ratio", c.dispatch.fixed_ratio},
                      {"trace_path", nullptr},
                      {"trace", c.dispatch.trace.empty() ? json(nullptr) : json(c.dispatch.trace)}}},
        {"offline", {{"epsilon", c.epsilon}}},
        {"qp", {{"method", to_string(c.qp.method)},
                {"eps_abs", c.qp.eps_abs},
                {"eps_dual", c.qp.eps_dual},
                {"eps_rel", c.qp.eps_rel},
                {"max_iter", c.qp.max_iter}}},
    };
}

void check_keys(const json& doc, const json& schema, const std::string& path, const Reader& rd) {
    if (!doc.is_object()) rd.fail(ExitCode::invalid_value, path.empty() ? "config" : path, "expected an object");
    for (const auto& [key, value] : doc.items()) {
        auto it = schema.find(key);
        if (it == schema.end()) rd.fail(ExitCode::unknown_key, path + key, "unknown key");
        if (key == "battery_menu") {
            if (!value.is_array()) rd.fail(ExitCode::invalid_value, path + key, "expected an array");
            for (const auto& entry : value) check_keys(entry, it->front(), path + key + "[].", rd);
        } else if (it->is_object() && value.is_object()) {
            check_keys(value, *it, path + key + ".", rd);
        } else if (it->is_object()) {
            rd.fail(ExitCode::invalid_value, path + key, "expected an object");
        }
    }
}

void merge(json& into, const json& from) {
    for (const auto& [key, value] : from.items()) {
        if (key != "battery_menu" && value.is_object() && into[key].is_object())
            merge(into[key], value);
        else
            into[key] = value;
    }
}

/// Dotted paths of every leaf in the schema.
void leaf_paths(const json& schema, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [key, value] : schema.items()) {
        if (value.is_object())
            leaf_paths(value, prefix + key + ".", out);
        else
            out.push_back(prefix + key);
    }
}

std::string resolve_override_key(const std::string& key, const json& schema) {
    // Full paths, top-level keys included, win over leaf-name matching.
    if (key.find('.') != std::string::npos || schema.contains(key)) return key;
    std::vector<std::string> leaves;
    leaf_paths(schema, "", leaves);
    std::vector<std::string> hits;
    for (const auto& p : leaves) {
        auto dot = p.rfind('.');
        if ((dot == std::string::npos ? p : p.substr(dot + 1)) == key) hits.push_back(p);
    }
    if (hits.empty()) throw ConfigError(ExitCode::unknown_key, fmt::format("override {}: unknown key", key));
    if (hits.size() > 1)
        throw ConfigError(ExitCode::unknown_key,
                          fmt::format("override {}: ambiguous, use one of {}", key, fmt::join(hits, ", ")));
    return hits.front();
}

void apply_override(json& doc, const std::string& spec, const json& schema) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(ExitCode::usage, fmt::format("override '{}' is not key=value", spec));
    std::string path = resolve_override_key(spec.substr(0, eq), schema);
    std::string raw = spec.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        auto dot = path.find('.', start);
        std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        json& child = (*node)[part];
        if (!child.is_object()) child = json::object();
        node = &child;
        start = dot + 1;
    }
}

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base_dir) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    return path;
}

template <typename Enum>
Enum parse_enum(const std::string& value, std::initializer_list<std::pair<const char*, Enum>> names,
                const std::string& path, const Reader& rd) {
    for (const auto& [name, e] : names)
        if (value == name) return e;
    std::vector<std::string> allowed;
    for (const auto& n : names) allowed.emplace_back(n.first);
    rd.fail(ExitCode::invalid_value, path, fmt::format("'{}' is not one of {}", value, fmt::join(allowed, ", ")));
}

RunConfig from_document(const json& d, const std::filesystem::path& base_dir, const Reader& rd) {
    RunConfig c;
    if (!d.at("seed").is_number_unsigned()) rd.fail(ExitCode::invalid_value, "seed", "must be an integer >= 0");
    c.seed = d.at("seed").get<std::uint64_t>();
    try {
        c.method = parse_method(rd.string(d, "method", ""));
    } catch (const std::invalid_argument& e) {
        rd.fail(ExitCode::invalid_value, "method", e.what());
    }
    c.feedback = rd.boolean(d, "feedback", "");

    const json& clock = d.at("clock");
    long long horizon = rd.integer(clock, "horizon_slots", "clock.");
    if (horizon < 1) rd.fail(ExitCode::invalid_value, "clock.horizon_slots", "must be >= 1");
    c.scenario.clock.horizon_slots = static_cast<int>(horizon);
    c.scenario.clock.slot_duration_h = rd.positive(clock, "slot_duration_min", "clock.") / 60.0;

    const json& fl = d.at("fleet");
    auto& f = c.scenario.fleet;
    long long size = rd.integer(fl, "size", "fleet.");
    if (size < 0) rd.fail(ExitCode::invalid_value, "fleet.size", "must be >= 0");
    f.fleet_size = static_cast<int>(size);
    f.arrival_mean_h = rd.nonnegative(fl, "arrival_mean_h", "fleet.");
    f.arrival_std_h = rd.nonnegative(fl, "arrival_std_h", "fleet.");
    f.departure_mean_h = rd.nonnegative(fl, "departure_mean_h", "fleet.");
    f.departure_std_h = rd.nonnegative(fl, "departure_std_h", "fleet.");
    f.initial_soc_mean = rd.unit(fl, "initial_soc_mean", "fleet.");
    f.initial_soc_std = rd.nonnegative(fl, "initial_soc_std", "fleet.");
    f.required_soc = rd.unit(fl, "required_soc", "fleet.");
    f.max_soc = rd.unit(fl, "max_soc", "fleet.");
    f.min_soc = rd.unit(fl, "min_soc", "fleet.");
    f.charging_efficiency = rd.unit(fl, "charging_efficiency", "fleet.");
    if (f.charging_efficiency <= 0.0) rd.fail(ExitCode::invalid_value, "fleet.charging_efficiency", "must be > 0");
    f.battery_menu.clear();
    for (const auto& b : fl.at("battery_menu")) {
        BatteryType t;
        t.capacity_kwh = rd.positive(b, "capacity_kwh", "fleet.battery_menu[].");
        t.max_power_kw = rd.positive(b, "max_power_kw", "fleet.battery_menu[].");
        f.battery_menu.push_back(t);
    }
    f.group_min_duration_h = static_cast<int>(rd.integer(fl, "group_min_duration_h", "fleet."));
    f.group_max_duration_h = static_cast<int>(rd.integer(fl, "group_max_duration_h", "fleet."));
    f.max_resample_attempts = static_cast<int>(rd.integer(fl, "max_resample_attempts", "fleet."));

    const json& cb = d.at("carbon");
    std::string source = rd.string(cb, "source", "carbon.");
    if (source == "synthetic") {
        SyntheticCarbon s;
        s.base_kg_per_kwh = rd.number(cb, "base_kg_per_kwh", "carbon.");
        s.amplitude_kg_per_kwh = rd.nonnegative(cb, "amplitude_kg_per_kwh", "carbon.");
        s.phase_h = rd.number(cb, "phase_h", "carbon.");
        if (!(s.base_kg_per_kwh - s.amplitude_kg_per_kwh > 0.0))
            rd.fail(ExitCode::invalid_value, "carbon.base_kg_per_kwh", "base - amplitude must be > 0");
        c.scenario.carbon = s;
    } else if (source == "csv") {
        if (cb.at("path").is_null()) rd.fail(ExitCode::invalid_value, "carbon.path", "required when source is csv");
        CsvCarbon csv;
        csv.path = resolve_path(rd.string(cb, "path", "carbon."), base_dir);
        if (!std::filesystem::is_regular_file(csv.path))
            rd.fail(ExitCode::missing_file, "carbon.path", fmt::format("no such file {}", csv.path.string()));
        csv.extension = parse_enum<TraceExtension>(
            rd.string(cb, "extension", "carbon."),
            {{"none", TraceExtension::none}, {"wrap", TraceExtension::wrap}, {"hold", TraceExtension::hold}},
            "carbon.extension", rd);
        c.scenario.carbon = csv;
    } else {
        rd.fail(ExitCode::invalid_value, "carbon.source", fmt::format("'{}' is not one of synthetic, csv", source));
    }

    const json& on = d.at("online");
    c.online.flexibility_weight = rd.positive(on, "V", "online.");
    c.online.carbon_weight = rd.nonnegative(on, "beta", "online.");
    c.online.delay_weight = rd.positive(on, "lambda", "online.");
    c.online.rate_cap_kg_per_h = rd.positive(on, "rate_cap_kg_per_h", "online.");
    c.online.slot_duration_h = c.scenario.clock.slot_duration_h;

    const json& dp = d.at("dispatch");
    c.dispatch.mode = parse_enum<DispatchMode>(rd.string(dp, "mode", "dispatch."),
                                               {{"uniform_random", DispatchMode::uniform_random},
                                                {"fixed_ratio", DispatchMode::fixed_ratio},
                                                {"replay", DispatchMode::replay}},
                                               "dispatch.mode", rd);
    c.dispatch.fixed_ratio = rd.unit(dp, "fixed_ratio", "dispatch.");
    if (!dp.at("trace_path").is_null()) {
        auto path = resolve_path(rd.string(dp, "trace_path", "dispatch."), base_dir);
        if (!std::filesystem::is_regular_file(path))
            rd.fail(ExitCode::missing_file, "dispatch.trace_path", fmt::format("no such file {}", path.string()));
        try {
            c.dispatch.trace = read_ratio_trace(path);
        } catch (const ConfigError& e) {
            rd.fail(ExitCode::invalid_value, "dispatch.trace_path", e.what());
        }
    } else if (const json& inline_trace = dp.at("trace"); !inline_trace.is_null()) {
        if (!inline_trace.is_array()) rd.fail(ExitCode::invalid_value, "dispatch.trace", "expected an array of ratios");
        for (const auto& v : inline_trace) {
            if (!v.is_number()) rd.fail(ExitCode::invalid_value, "dispatch.trace", fmt::format("{} is not a number", v.dump()));
            c.dispatch.trace.push_back(v.get<double>());
        }
    }
    if (c.dispatch.mode == DispatchMode::replay && c.dispatch.trace.empty())
        rd.fail(ExitCode::invalid_value, "dispatch.trace_path", "replay needs trace_path or trace");

    c.epsilon = rd.nonnegative(d.at("offline"), "epsilon", "offline.");

    const json& qp = d.at("qp");
    c.qp.method = parse_enum<QpMethod>(rd.string(qp, "method", "qp."),
                                       {{"admm", QpMethod::admm}, {"interior_point", QpMethod::interior_point}},
                                       "qp.method", rd);
    c.qp.eps_abs = rd.positive(qp, "eps_abs", "qp.");
    c.qp.eps_dual = rd.positive(qp, "eps_dual", "qp.");
    c.qp.eps_rel = rd.nonnegative(qp, "eps_rel", "qp.");
    long long iters = rd.integer(qp, "max_iter", "qp.");
    if (iters < 1) rd.fail(ExitCode::invalid_value, "qp.max_iter", "must be >= 1");
    c.qp.max_iter = static_cast<int>(iters);

    // Cross-field rules live in the domain validators.
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(ExitCode::invalid_value, fmt::format("config: {}", e.what()));
    }
    return c;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       std::span<const std::string> overrides) {
    Reader rd(text);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(ExitCode::malformed, fmt::format("config is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw ConfigError(ExitCode::malformed, "config must be a JSON object");
    auto version = doc.find("schema_version");
    if (version == doc.end()) throw ConfigError(ExitCode::malformed, "config: schema_version is missing");
    if (!version->is_number_integer() || version->get<long long>() != kConfigSchemaVersion)
        rd.fail(ExitCode::malformed, "schema_version",
                fmt::format("unsupported version {}, expected {}", version->dump(), kConfigSchemaVersion));

    json schema = schema_document(RunConfig{});
    for (const auto& o : overrides) apply_override(doc, o, schema);
    check_keys(doc, schema, "", rd);
    json merged = schema;
    merge(merged, doc);
    return from_document(merged, base_dir, rd);
}

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError(ExitCode::missing_file, fmt::format("cannot open config {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path(), overrides);
}

std::string dump_config(const RunConfig& config) {
    return schema_document(config).dump(2) + "\n";
}

std::filesystem::path default_output_root() {
    const char* env = std::getenv("EVFLEX_OUTPUT_ROOT");
    if (env != nullptr && *env != '\0') return env;
    return "runs";
}

std::vector<double> read_ratio_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(ExitCode::missing_file, fmt::format("cannot open ratio trace {}", path.string()));
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(ExitCode::invalid_value, "ratio trace is empty");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    auto col = std::find(header.begin(), header.end(), "gamma");
    if (col == header.end()) throw ConfigError(ExitCode::invalid_value, "ratio trace has no gamma column");
    auto index = static_cast<std::size_t>(col - header.begin());
    std::vector<double> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t i = 0; i <= index; ++i)
            if (!std::getline(ss, cell, ','))
                throw ConfigError(ExitCode::invalid_value, fmt::format("ratio trace line {}: missing gamma", row));
        try {
            std::size_t used = 0;
            double v = std::stod(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError(ExitCode::invalid_value, fmt::format("ratio trace line {}: '{}' is not a number", row, cell));
        }
    }
    return out;
}

}  // namespace evflex
