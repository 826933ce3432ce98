// Scenario evaluation: tracking-error metric, intent satisfaction, multi-seed
// aggregation and the setup comparison table.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imarl/supervisor.hpp"

namespace imarl::evalkit {

using env::ServiceKind;
using supervisor::Setup;

/// Mean absolute deviation between observed KPI and goal over a run.
/// Throws std::invalid_argument on empty input or a length mismatch.
double metric_m(std::span<const double> observed, std::span<const double> goals);

/// Share of steps where the directional intent test passes.
double satisfaction_fraction(std::span<const double> observed, std::span<const double> goals, env::Direction dir);

/// Intents that become active at a control step. Later phases may only move targets.
struct IntentPhase {
    int step = 0;
    std::array<env::Intent, env::kServiceCount> intents = env::default_intents();
};

struct ScenarioConfig {
    std::string name = "scenario";
    env::EnvConfig env;  ///< emulator, penalties; env.intents mirrors schedule[0]
    int horizon = 40;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<IntentPhase> schedule = {IntentPhase{}};
    supervisor::SupervisorConfig supervisor;

    /// Throws std::invalid_argument on fewer than 5 seeds or a bad intent schedule
    /// (first phase not at step 0, steps not strictly increasing, a phase outside
    /// the horizon, or a later phase changing anything but targets).
    void validate() const;
    /// Goal changes implied by the schedule after step 0.
    std::vector<supervisor::GoalChange> goal_changes() const;
};

struct ServiceStats {
    double m = 0.0;
    double satisfaction = 0.0;
};

struct SeedRun {
    std::uint64_t seed = 0;
    supervisor::EpisodeTrace trace;
    std::array<ServiceStats, env::kServiceCount> stats{};
};

struct Spread {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr() const { return q3 - q1; }
};

/// Median and quartiles by linear interpolation between order statistics.
Spread spread(std::vector<double> values);

struct ScenarioResult {
    std::string scenario;
    Setup setup = Setup::SUPERVISED_BOTH;
    std::vector<SeedRun> runs;
    std::array<Spread, env::kServiceCount> m{};
    std::array<Spread, env::kServiceCount> satisfaction{};

    std::vector<std::uint64_t> seeds() const;
};

/// Per-seed statistics of one trace.
std::array<ServiceStats, env::kServiceCount> trace_stats(const supervisor::EpisodeTrace& trace);

/// Runs every seed of a scenario under one setup. Each seed gets a fresh environment
/// seeded with it, and evaluation goals equal the intent targets. Seeds are spread
/// over up to `jobs` threads; results do not depend on the thread count.
ScenarioResult run_scenario(const ScenarioConfig& scenario, Setup setup, const supervisor::Policies& policies,
                            int jobs = 1);

struct ComparisonCell {
    double median_m = 0.0;
    bool winner = false;  ///< strictly lowest median in its service column
};

struct Comparison {
    std::vector<Setup> setups;
    /// cells[setup index][service index]
    std::vector<std::array<ComparisonCell, env::kServiceCount>> cells;
};

/// Median M per setup and service with a winner flag per service; a tie for the
/// lowest value flags nobody, and so does a single setup. Throws std::invalid_argument when the results were
/// produced with different seed lists or are empty.
Comparison compare_setups(std::span<const ScenarioResult> results);

/// Long-format trace CSV: seed, step, tick, service, observed, goal, priority, mbr,
/// reward, global_reward, active_group.
std::string trace_csv(const ScenarioResult& result);
/// Same columns for a single seed.
std::string trace_csv(const SeedRun& run);
nlohmann::json summary_json(const ScenarioResult& result);
/// Rebuilds per-seed statistics and spreads from summary_json output (no traces).
/// Throws std::invalid_argument on malformed input.
ScenarioResult result_from_summary(const nlohmann::json& j);
std::string comparison_csv(const Comparison& cmp);

}  // namespace imarl::evalkit
