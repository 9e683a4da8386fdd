#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "evflex/harness.hpp"

namespace evflex {

inline constexpr int kConfigSchemaVersion = 1;

/// Process exit codes shared by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    runtime_failure = 1,  // simulation error or a failed runtime invariant
    usage = 2,            // bad command line
    malformed = 3,        // unreadable JSON or wrong schema version
    unknown_key = 4,
    invalid_value = 5,
    missing_file = 6,
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(ExitCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
    ExitCode code() const { return code_; }

private:
    ExitCode code_;
};

/// Parses a JSON config. Relative file paths resolve against `base_dir`.
/// Each override is `key=value`, where key is a dotted path (`online.V`) or
/// a leaf name that is unique in the schema (`V`); values are read as JSON
/// when possible and as strings otherwise. Every key absent from the file
/// keeps its default.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                       std::span<const std::string> overrides = {});

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Full config (every key, defaults included) as pretty-printed JSON that
/// parse_config reads back to the same RunConfig.
std::string dump_config(const RunConfig& config);

/// $EVFLEX_OUTPUT_ROOT when set and non-empty, else "runs".
std::filesystem::path default_output_root();

/// Reads replay ratios from a CSV with a `gamma` column.
std::vector<double> read_ratio_trace(const std::filesystem::path& path);

}  // namespace evflex
