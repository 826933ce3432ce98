// Rule-based supervisor that alternates the priority and MBR agent groups, and the
// closed-loop episode runner used for evaluation.

#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "imarl/envapi.hpp"
#include "imarl/qmix/learner.hpp"

namespace imarl::supervisor {

using env::AgentGroup;

enum class Setup { ONLY_PRIORITY, ONLY_MBR, SUPERVISED_BOTH };

std::string_view to_string(Setup s);
/// Accepts "only-priority", "only-mbr", "supervised" (and the enum spellings).
Setup setup_from_string(std::string_view name);

/// Per-UE figures the decision rule inspects.
struct UeSnapshot {
    double delivered = 0.0;
    double mbr = 0.0;
    /// Rate the UE asks the scheduler for (offered load already capped by its MBR).
    double demand = std::numeric_limits<double>::infinity();
};

/// MBR group when every UE delivers what its rate limit allows (within `tolerance`),
/// otherwise the priority group. The limit is min(mbr, demand).
/// Throws std::invalid_argument on an empty snapshot or negative tolerance.
AgentGroup decide(std::span<const UeSnapshot> ues, double tolerance);

/// Which rate the decision compares delivered throughput against.
enum class CapRule {
    MBR,            ///< the configured MBR only
    DEMAND_LIMITED  ///< min(MBR, offered load)
};

struct SupervisorConfig {
    int cadence = 5;
    double tolerance = 0.05;
    CapRule cap_rule = CapRule::DEMAND_LIMITED;

    void validate() const;
};

/// Snapshot of the network as the supervisor sees it (smoothed rates).
std::vector<UeSnapshot> snapshot(const env::Environment& environment, CapRule rule);

struct GoalChange {
    int step = 0;
    env::ServiceKind service = env::ServiceKind::CV;
    double target = 0.0;
};

struct TraceRow {
    int step = 0;
    long long tick = 0;
    env::ServiceKind service = env::ServiceKind::CV;
    double observed = 0.0;
    double goal = 0.0;
    int priority = 0;
    double mbr = 0.0;
    double reward = 0.0;
    double global_reward = 0.0;
    AgentGroup active = AgentGroup::PRIORITY;
};

struct EpisodeTrace {
    std::vector<TraceRow> rows;  ///< one row per (step, service)
    std::vector<AgentGroup> active_per_step;
};

struct Policies {
    const qmix::QmixNet* priority = nullptr;
    const qmix::QmixNet* mbr = nullptr;
};

/// Runs `horizon` greedy control steps after env.reset(goals). Goal changes take effect
/// at the start of their step. Each group's recurrent state advances only on the steps
/// where that group acts. Throws std::invalid_argument when a needed policy is missing
/// or a goal change is out of range.
EpisodeTrace run_episode(env::Environment& environment, const Policies& policies, Setup setup,
                         const SupervisorConfig& sup, int horizon, std::span<const GoalChange> changes);

}  // namespace imarl::supervisor
