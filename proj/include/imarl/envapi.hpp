// Goal-conditioned multi-agent environment on top of the network emulator.
//
// Two agent groups act on the network: three priority agents (one per service,
// service-level packet priority) and three MBR agents (one per service, acting on
// the intent's in-scope UE group). Only one group acts per control step.

#pragma once

#include <array>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imarl/netemu.hpp"

namespace imarl::env {

using netemu::Direction;
using netemu::KpiKind;
using netemu::KpiRange;
using netemu::ServiceKind;
using netemu::kServiceCount;

enum class AgentGroup { PRIORITY, MBR };
enum class Action : int { DOWN = -1, UP = 1 };

std::string_view to_string(AgentGroup g);
AgentGroup group_from_string(std::string_view name);
inline int delta(Action a) { return static_cast<int>(a); }

struct Intent {
    std::string id;
    ServiceKind service = ServiceKind::CV;
    int percent = 100;
    KpiKind kpi = KpiKind::QOE;
    Direction direction = Direction::AT_LEAST;
    double target = 0.0;

    /// Builds an intent whose KPI kind and direction follow the service type.
    static Intent for_service(std::string id, ServiceKind service, int percent, double target);
    /// Throws std::invalid_argument when the fields are inconsistent.
    void validate() const;
    bool satisfied_by(double observed) const;
};

/// The intents used for evaluation: CV 75% QoE >= 3.0, URLLC 100% PLR <= 0.02,
/// mIoT 100% PLR <= 0.04.
std::array<Intent, kServiceCount> default_intents();

bool intent_satisfied(Direction direction, double observed, double target);

struct LocalObservation {
    double o = 0.0;  ///< observed KPI
    double g = 0.0;  ///< goal
    double G = 0.0;  ///< global reward
    int n = 0;       ///< UEs in the agent's scope
};

/// Scale factors that map a LocalObservation into [0, 1]^4.
struct ObservationScale {
    KpiRange kpi_range;
    double global_max = 1.0;
    int total_ues = 1;
};

std::array<double, 4> normalize(const LocalObservation& obs, const ObservationScale& scale);

struct JointObservation {
    std::vector<LocalObservation> locals;
    std::vector<std::array<double, 4>> features;  ///< normalized locals, same order

    std::size_t size() const { return locals.size(); }
    /// Concatenated normalized features, the global state seen by the mixer.
    std::vector<double> state() const;
};

struct AgentSpec {
    std::string id;
    AgentGroup group = AgentGroup::PRIORITY;
    ServiceKind service = ServiceKind::CV;
    std::vector<int> ue_scope;
    int bin_index = 0;  ///< MBR agents
    int priority = 7;   ///< priority agents: last commanded priority
    double penalty = 1.0;
};

/// r = 1 - |o - g| / delta. Throws std::invalid_argument when delta <= 0.
double local_reward(double o, double g, double delta);

struct RewardTerm {
    double reward = 0.0;
    double penalty = 1.0;
};

/// G = sum(penalty * reward).
double global_reward(std::span<const RewardTerm> terms);

inline constexpr double kMbrBinWidth = 0.5;

/// Number of 0.5 Mbps bins covering [1, alpha].
int num_mbr_bins(double alpha);
/// Half-open MBR bounds of a bin.
std::pair<double, double> mbr_bin_bounds(int bin);

/// Moves the agent one bin and draws the new MBR uniformly inside it.
double apply_mbr_action(AgentSpec& agent, Action a, double alpha, std::mt19937_64& rng);

/// Moves the agent's commanded priority by one, clamped to [1, 100].
int apply_priority_action(AgentSpec& agent, Action a);

struct UeGroups {
    std::vector<int> in_scope;
    std::vector<int> out_scope;
};

/// First ceil(percent/100 * n) UEs by id are in scope, the rest out of scope.
UeGroups make_ue_groups(std::span<const int> service_ues, int percent);

struct EnvConfig {
    netemu::EmulatorConfig emulator;
    std::array<double, kServiceCount> penalties = {1.0, 1.0, 1.0};
    std::array<Intent, kServiceCount> intents = default_intents();
    int horizon = 30;
    int warmup_ticks = 10;
    int priority_settle_ticks = 40;
    int mbr_settle_ticks = 10;
    KpiRange qoe_goal_domain{2.0, 4.5};
    KpiRange plr_goal_domain{0.0, 0.10};
    /// MBR agents also write the out-of-scope UEs of their service when false.
    bool freeze_out_of_scope = true;

    void validate() const;
    double penalty_sum() const;
};

struct StepResult {
    JointObservation obs;
    std::vector<double> local_rewards;
    double global = 0.0;
    bool done = false;
};

/// Per-UE figures the supervisor inspects.
struct UeRate {
    double delivered = 0.0;
    double mbr = 0.0;
};

class Environment {
public:
    Environment(EnvConfig config, std::uint64_t seed);

    /// Starts an episode. Without goals (training) they are drawn from the goal domains.
    JointObservation reset(std::optional<std::array<double, kServiceCount>> goals = std::nullopt);

    /// Applies one action per agent of `group`, lets the network settle and observes.
    StepResult step(std::span<const Action> actions, AgentGroup group);

    void set_goal(ServiceKind service, double goal);
    double goal(ServiceKind service) const { return goals_[netemu::index_of(service)]; }

    JointObservation observe(AgentGroup group) const;
    double observed_kpi(ServiceKind service) const;
    std::array<double, kServiceCount> local_rewards() const;
    double current_global_reward() const;
    bool all_satisfied() const;

    std::vector<UeRate> ue_rates() const;

    const EnvConfig& config() const { return config_; }
    const netemu::NetworkState& network() const { return net_; }
    const std::vector<AgentSpec>& agents(AgentGroup group) const;
    int step_count() const { return steps_; }
    static constexpr std::size_t agents_per_group() { return kServiceCount; }

    /// Settle window of a group's control step in ticks.
    int settle_ticks(AgentGroup group) const;
    /// MBR currently in force on a service's in-scope group.
    double scoped_mbr(ServiceKind service) const;

private:
    EnvConfig config_;
    std::mt19937_64 rng_;
    netemu::NetworkState net_;
    std::vector<AgentSpec> priority_agents_;
    std::vector<AgentSpec> mbr_agents_;
    std::array<double, kServiceCount> goals_{};
    std::array<UeGroups, kServiceCount> groups_;
    int steps_ = 0;

    void build_agents();
    double sample_goal(ServiceKind service);
};

}  // namespace imarl::env
