#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "imarl/supervisor.hpp"

namespace imarl::supervisor {

std::string_view to_string(Setup s) {
    switch (s) {
        case Setup::ONLY_PRIORITY: return "only-priority";
        case Setup::ONLY_MBR: return "only-mbr";
        case Setup::SUPERVISED_BOTH: return "supervised";
    }
    return "?";
}

Setup setup_from_string(std::string_view name) {
    if (name == "only-priority" || name == "ONLY_PRIORITY") return Setup::ONLY_PRIORITY;
    if (name == "only-mbr" || name == "ONLY_MBR") return Setup::ONLY_MBR;
    if (name == "supervised" || name == "SUPERVISED_BOTH") return Setup::SUPERVISED_BOTH;
    throw std::invalid_argument("unknown setup '" + std::string(name) + "'");
}

AgentGroup decide(std::span<const UeSnapshot> ues, double tolerance) {
    if (ues.empty()) throw std::invalid_argument("decide: empty snapshot");
    if (!(tolerance >= 0.0)) throw std::invalid_argument("decide: tolerance must be non-negative");
    const bool all_at_limit = std::all_of(ues.begin(), ues.end(), [&](const UeSnapshot& u) {
        return std::abs(u.delivered - std::min(u.mbr, u.demand)) <= tolerance;
    });
    return all_at_limit ? AgentGroup::MBR : AgentGroup::PRIORITY;
}

void SupervisorConfig::validate() const {
    if (cadence < 1) throw std::invalid_argument("supervisor cadence must be positive");
    if (!(tolerance >= 0.0)) throw std::invalid_argument("supervisor tolerance must be non-negative");
}

std::vector<UeSnapshot> snapshot(const env::Environment& environment, CapRule rule) {
    std::vector<UeSnapshot> out;
    for (const auto& ue : environment.network().ues) {
        UeSnapshot s{ue.smoothed_delivered(), ue.mbr};
        if (rule == CapRule::DEMAND_LIMITED) s.demand = ue.smoothed_demand();
        out.push_back(s);
    }
    return out;
}

EpisodeTrace run_episode(env::Environment& environment, const Policies& policies, Setup setup,
                         const SupervisorConfig& sup, int horizon, std::span<const GoalChange> changes) {
    sup.validate();
    if (horizon < 1) throw std::invalid_argument("run_episode: horizon must be positive");
    const bool need_priority = setup != Setup::ONLY_MBR;
    const bool need_mbr = setup != Setup::ONLY_PRIORITY;
    if ((need_priority && policies.priority == nullptr) || (need_mbr && policies.mbr == nullptr)) {
        throw std::invalid_argument("run_episode: setup " + std::string(to_string(setup)) + " needs a missing policy");
    }
    for (const auto& c : changes) {
        if (c.step < 0 || c.step >= horizon) throw std::invalid_argument("goal change step outside the horizon");
    }

    std::optional<qmix::Policy> prio, mbr;
    if (need_priority) prio.emplace(*policies.priority);
    if (need_mbr) mbr.emplace(*policies.mbr);

    EpisodeTrace trace;
    AgentGroup active = setup == Setup::ONLY_MBR ? AgentGroup::MBR : AgentGroup::PRIORITY;
    for (int t = 0; t < horizon; ++t) {
        for (const auto& c : changes) {
            if (c.step == t) environment.set_goal(c.service, c.target);
        }
        if (setup == Setup::SUPERVISED_BOTH && t % sup.cadence == 0) {
            const auto snap = snapshot(environment, sup.cap_rule);
            active = decide(snap, sup.tolerance);
        }
        qmix::Policy& policy = active == AgentGroup::PRIORITY ? *prio : *mbr;
        const auto obs = environment.observe(active);
        const auto actions = policy.act(obs);
        const auto res = environment.step(actions, active);

        const auto rewards = environment.local_rewards();
        for (auto s : netemu::kAllServices) {
            const auto i = netemu::index_of(s);
            trace.rows.push_back({t, environment.network().tick, s, environment.observed_kpi(s), environment.goal(s),
                                  environment.network().service(s).priority, environment.scoped_mbr(s), rewards[i],
                                  res.global, active});
        }
        trace.active_per_step.push_back(active);
    }
    return trace;
}

}  // namespace imarl::supervisor
