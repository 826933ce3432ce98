// Run configuration files, canonical hashing and run manifests.
//
// One JSON document describes a scenario end to end: emulator, penalties, intents,
// environment windows, training hyperparameters and the evaluation protocol.
// Unknown keys are rejected everywhere.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "imarl/evalkit.hpp"
#include "imarl/jsonutil.hpp"
#include "imarl/qmix/learner.hpp"

namespace imarl::config {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
    evalkit::ScenarioConfig scenario;
    qmix::Hyperparams hyperparams;
};

/// Throws ConfigError naming the offending key on any schema violation.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved document (all defaults filled in); parse(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json env_to_json(const env::EnvConfig& env);

/// Hex SHA-256 of the canonical serialization (sorted keys, no whitespace).
std::string canonical_hash(const nlohmann::json& j);

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string command;
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    nlohmann::json hyperparameters;
    std::vector<std::string> checkpoint_ids;  ///< content hashes of checkpoints used or produced
    std::vector<std::string> artifacts;       ///< files written by the run, relative to the manifest
    std::string started_at;
    std::string finished_at;

    nlohmann::json to_json() const;
};

/// Current UTC time as ISO-8601.
std::string utc_now();

/// Output root: $IMARL_OUTPUT_ROOT when set, otherwise the current directory.
std::filesystem::path output_root();
/// Resolves relative output paths against output_root().
std::filesystem::path resolve_output(const std::filesystem::path& p);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace imarl::config
