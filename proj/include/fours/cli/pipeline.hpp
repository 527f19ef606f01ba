#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fours::cli {

enum ExitCode : int {
    kSuccess = 0,
    kFailure = 1,
    kValidation = 2,
    kNotConverged = 3,
};

std::string tool_version();

// Command-line values that take precedence over the config file. Each `set`
// entry is "path.to.key=<json value>"; a value that does not parse as JSON is
// taken as a string.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<int> threads;
    std::vector<std::string> set;
};

// Resolved run configuration. Input paths in `document` are relative to
// `base_dir`; every artifact goes below `out_dir`.
struct RunConfig {
    std::filesystem::path base_dir;
    std::filesystem::path out_dir;
    std::uint64_t seed = 1;
    int threads = 1;
    nlohmann::json document;
    std::string hash;

    // Object stored under `name`, or an empty object.
    nlohmann::json section(const std::string& name) const;
    std::filesystem::path input_path(const std::string& value) const;
};

RunConfig make_config(nlohmann::json document, const std::filesystem::path& base_dir,
                      const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// SHA-256 of the canonical document without the output directory and the
// thread count, which do not affect results.
std::string config_hash(const nlohmann::json& document);

// Named sub-streams of the top-level seed.
enum class SeedStream : std::uint64_t { Simulate = 1, Structure = 2 };
std::uint64_t stream_seed(const RunConfig& config, SeedStream stream);

// Directory name used for a subdimension's artifacts.
std::string artifact_name(const std::string& subdimension);

// Each command reads its inputs, writes its artifacts atomically and returns
// an exit code. Errors propagate as exceptions; `run` maps them to codes.
int cmd_simulate(const RunConfig& config);
int cmd_structure(const RunConfig& config);
int cmd_sequence(const RunConfig& config);
int cmd_stage(const RunConfig& config);
int cmd_select(const RunConfig& config);
int cmd_report(const RunConfig& config);

const std::vector<std::string>& command_names();

// Runs one command and reports failures on stderr: 2 for invalid input or
// missing upstream artifacts, 3 when a fit did not converge, 1 otherwise.
int run(const std::string& command, const RunConfig& config);

}  // namespace fours::cli
