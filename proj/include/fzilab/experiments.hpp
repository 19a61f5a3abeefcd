#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fzilab/serialize.hpp"

namespace fzilab {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = FZILAB_VERSION;

/// Parsed run configuration. `config` is the document as written; seeds are
/// already shifted by `seed_offset`.
struct RunConfig {
    Json config;
    std::string experiment;
    std::vector<std::uint64_t> seeds;
    std::int64_t seed_offset = 0;
    /// Directory of the config file, for relative "file" references.
    std::string base_dir;
};

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct RunOutcome {
    std::string experiment;
    std::vector<Check> checks;
    /// Output files relative to the output directory, in write order.
    std::vector<std::string> files;
    Json summary;

    bool all_pass() const;
};

/// Loads a config or a manifest written by a previous run. A manifest carries
/// its own seed offset; for plain configs `seed_offset` (typically from the
/// FZI_LAB_SEED_OFFSET variable) is applied. Throws ConfigError.
RunConfig load_run_config(const std::string& path, std::int64_t seed_offset = 0);
RunConfig parse_run_config(const Json& document, const std::string& base_dir, std::int64_t seed_offset = 0);

/// Builds every object the experiment needs and checks its preconditions
/// without running it. Throws ConfigError naming the violated rule.
void validate_run_config(const RunConfig& config);

/// Runs the experiment, writes its CSV, JSON and SVG artifacts plus
/// manifest.json into out_dir (created if needed).
RunOutcome run_experiment(const RunConfig& config, const std::string& out_dir, int workers = 1);

/// FNV-1a 64 of the compact dump, as 16 hex digits.
std::string config_hash(const Json& config);

/// FZI_LAB_SEED_OFFSET as an integer (0 when unset); throws ConfigError if malformed.
std::int64_t seed_offset_from_env();

/// World (mdp, features, grid) from the "environment", "features" and "grid" sections.
World build_world(const RunConfig& config);

} // namespace fzilab
