#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "imarl/envapi.hpp"

namespace imarl::env {

using netemu::index_of;

std::string_view to_string(AgentGroup g) { return g == AgentGroup::PRIORITY ? "priority" : "mbr"; }

AgentGroup group_from_string(std::string_view name) {
    if (name == "priority") return AgentGroup::PRIORITY;
    if (name == "mbr") return AgentGroup::MBR;
    throw std::invalid_argument("unknown agent group '" + std::string(name) + "'");
}

Intent Intent::for_service(std::string id, ServiceKind service, int percent, double target) {
    const auto type = netemu::ServiceType::of(service);
    return {std::move(id), service, percent, type.kpi_kind, type.direction(), target};
}

void Intent::validate() const {
    const auto type = netemu::ServiceType::of(service);
    if (percent <= 0 || percent > 100) throw std::invalid_argument("intent " + id + ": percent must be in (0, 100]");
    if (kpi != type.kpi_kind) throw std::invalid_argument("intent " + id + ": KPI kind does not match the service");
    if (direction != type.direction()) {
        throw std::invalid_argument("intent " + id + ": direction does not match the KPI kind");
    }
    if (!type.kpi_range.contains(target)) throw std::invalid_argument("intent " + id + ": target outside KPI range");
}

bool intent_satisfied(Direction direction, double observed, double target) {
    return direction == Direction::AT_LEAST ? observed >= target : observed <= target;
}

bool Intent::satisfied_by(double observed) const { return intent_satisfied(direction, observed, target); }

std::array<Intent, kServiceCount> default_intents() {
    return {Intent::for_service("1.1", ServiceKind::CV, 75, 3.0),
            Intent::for_service("2", ServiceKind::URLLC, 100, 0.02),
            Intent::for_service("3", ServiceKind::MIOT, 100, 0.04)};
}

std::array<double, 4> normalize(const LocalObservation& obs, const ObservationScale& scale) {
    const double w = scale.kpi_range.width();
    return {(obs.o - scale.kpi_range.lo) / w, (obs.g - scale.kpi_range.lo) / w, obs.G / scale.global_max,
            static_cast<double>(obs.n) / static_cast<double>(scale.total_ues)};
}

std::vector<double> JointObservation::state() const {
    std::vector<double> s;
    s.reserve(features.size() * 4);
    for (const auto& f : features) s.insert(s.end(), f.begin(), f.end());
    return s;
}

double local_reward(double o, double g, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("local_reward: delta must be positive");
    return 1.0 - std::abs(o - g) / delta;
}

double global_reward(std::span<const RewardTerm> terms) {
    double sum = 0.0;
    for (const auto& t : terms) sum += t.penalty * t.reward;
    return sum;
}

int num_mbr_bins(double alpha) {
    return std::max(1, static_cast<int>(std::floor((alpha - netemu::kMinMbr) / kMbrBinWidth + 1e-9)));
}

std::pair<double, double> mbr_bin_bounds(int bin) {
    const double lo = netemu::kMinMbr + kMbrBinWidth * bin;
    return {lo, lo + kMbrBinWidth};
}

double apply_mbr_action(AgentSpec& agent, Action a, double alpha, std::mt19937_64& rng) {
    if (agent.group != AgentGroup::MBR) throw std::logic_error("apply_mbr_action on a priority agent");
    agent.bin_index = std::clamp(agent.bin_index + delta(a), 0, num_mbr_bins(alpha) - 1);
    const auto [lo, hi] = mbr_bin_bounds(agent.bin_index);
    std::uniform_real_distribution<double> draw(lo, hi);
    return draw(rng);
}

int apply_priority_action(AgentSpec& agent, Action a) {
    if (agent.group != AgentGroup::PRIORITY) throw std::logic_error("apply_priority_action on an MBR agent");
    agent.priority = std::clamp(agent.priority + delta(a), netemu::kMinPriority, netemu::kMaxPriority);
    return agent.priority;
}

UeGroups make_ue_groups(std::span<const int> service_ues, int percent) {
    if (percent <= 0 || percent > 100) throw std::invalid_argument("make_ue_groups: percent must be in (0, 100]");
    std::vector<int> ids(service_ues.begin(), service_ues.end());
    std::sort(ids.begin(), ids.end());
    const std::size_t k = (static_cast<std::size_t>(percent) * ids.size() + 99) / 100;
    UeGroups g;
    g.in_scope.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    g.out_scope.assign(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
    return g;
}

void EnvConfig::validate() const {
    for (double p : penalties) {
        if (!(p > 0.0)) throw std::invalid_argument("penalties must be positive");
    }
    for (std::size_t i = 0; i < kServiceCount; ++i) {
        intents[i].validate();
        if (index_of(intents[i].service) != i) throw std::invalid_argument("intents must be ordered cv, urllc, miot");
    }
    if (horizon < 1) throw std::invalid_argument("horizon must be positive");
    if (warmup_ticks < 0 || priority_settle_ticks < 1 || mbr_settle_ticks < 1) {
        throw std::invalid_argument("tick windows must be positive");
    }
    if (qoe_goal_domain.lo < 1.0 || qoe_goal_domain.hi > 5.0 || qoe_goal_domain.lo > qoe_goal_domain.hi ||
        plr_goal_domain.lo < 0.0 || plr_goal_domain.hi > 1.0 || plr_goal_domain.lo > plr_goal_domain.hi) {
        throw std::invalid_argument("goal domains must lie inside the KPI ranges");
    }
}

double EnvConfig::penalty_sum() const { return penalties[0] + penalties[1] + penalties[2]; }

Environment::Environment(EnvConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed) {
    config_.validate();
    net_ = netemu::build_topology(config_.emulator, rng_());
    for (std::size_t i = 0; i < kServiceCount; ++i) goals_[i] = config_.intents[i].target;
    build_agents();
}

void Environment::build_agents() {
    priority_agents_.clear();
    mbr_agents_.clear();
    for (ServiceKind s : netemu::kAllServices) {
        const auto i = index_of(s);
        groups_[i] = make_ue_groups(net_.service(s).ues, config_.intents[i].percent);
        const std::string name(netemu::to_string(s));

        AgentSpec p;
        p.id = "priority_" + name;
        p.group = AgentGroup::PRIORITY;
        p.service = s;
        p.ue_scope = net_.service(s).ues;
        p.priority = net_.service(s).priority;
        p.penalty = config_.penalties[i];
        priority_agents_.push_back(std::move(p));

        AgentSpec m;
        m.id = "mbr_" + name;
        m.group = AgentGroup::MBR;
        m.service = s;
        m.ue_scope = groups_[i].in_scope;
        m.bin_index = std::clamp(
            static_cast<int>(std::floor((config_.emulator.initial_mbr - netemu::kMinMbr) / kMbrBinWidth)), 0,
            num_mbr_bins(config_.emulator.max_mbr()) - 1);
        m.penalty = config_.penalties[i];
        mbr_agents_.push_back(std::move(m));
    }
}

double Environment::sample_goal(ServiceKind service) {
    const auto& d = netemu::ServiceType::of(service).kpi_kind == KpiKind::QOE ? config_.qoe_goal_domain
                                                                              : config_.plr_goal_domain;
    std::uniform_real_distribution<double> u(d.lo, d.hi);
    return u(rng_);
}

JointObservation Environment::reset(std::optional<std::array<double, kServiceCount>> goals) {
    net_ = netemu::build_topology(config_.emulator, rng_());
    build_agents();
    steps_ = 0;
    if (goals) {
        goals_ = *goals;
    } else {
        for (ServiceKind s : netemu::kAllServices) goals_[index_of(s)] = sample_goal(s);
    }
    netemu::run_ticks(net_, config_.warmup_ticks);
    return observe(AgentGroup::PRIORITY);
}

void Environment::set_goal(ServiceKind service, double goal) {
    if (!netemu::ServiceType::of(service).kpi_range.contains(goal)) {
        throw std::invalid_argument("goal outside the service's KPI range");
    }
    goals_[index_of(service)] = goal;
}

const std::vector<AgentSpec>& Environment::agents(AgentGroup group) const {
    return group == AgentGroup::PRIORITY ? priority_agents_ : mbr_agents_;
}

int Environment::settle_ticks(AgentGroup group) const {
    return group == AgentGroup::PRIORITY ? config_.priority_settle_ticks : config_.mbr_settle_ticks;
}

double Environment::observed_kpi(ServiceKind service) const {
    return netemu::observe_kpi(net_, service, config_.intents[index_of(service)].percent);
}

std::array<double, kServiceCount> Environment::local_rewards() const {
    std::array<double, kServiceCount> r{};
    for (ServiceKind s : netemu::kAllServices) {
        const auto i = index_of(s);
        r[i] = local_reward(observed_kpi(s), goals_[i], netemu::ServiceType::of(s).kpi_range.width());
    }
    return r;
}

double Environment::current_global_reward() const {
    const auto r = local_rewards();
    std::array<RewardTerm, kServiceCount> terms{};
    for (std::size_t i = 0; i < kServiceCount; ++i) terms[i] = {r[i], config_.penalties[i]};
    return global_reward(terms);
}

bool Environment::all_satisfied() const {
    for (ServiceKind s : netemu::kAllServices) {
        if (!intent_satisfied(netemu::ServiceType::of(s).direction(), observed_kpi(s), goals_[index_of(s)])) {
            return false;
        }
    }
    return true;
}

JointObservation Environment::observe(AgentGroup group) const {
    JointObservation jo;
    const double G = current_global_reward();
    for (const auto& agent : agents(group)) {
        const auto i = index_of(agent.service);
        LocalObservation lo{observed_kpi(agent.service), goals_[i], G, static_cast<int>(agent.ue_scope.size())};
        const ObservationScale scale{netemu::ServiceType::of(agent.service).kpi_range, config_.penalty_sum(),
                                     static_cast<int>(net_.ues.size())};
        jo.features.push_back(normalize(lo, scale));
        jo.locals.push_back(lo);
    }
    return jo;
}

StepResult Environment::step(std::span<const Action> actions, AgentGroup group) {
    auto& agents = group == AgentGroup::PRIORITY ? priority_agents_ : mbr_agents_;
    if (actions.size() != agents.size()) {
        throw std::invalid_argument("step: expected one action per agent of the " + std::string(to_string(group)) +
                                    " group");
    }
    for (std::size_t k = 0; k < agents.size(); ++k) {
        auto& agent = agents[k];
        if (group == AgentGroup::MBR) {
            const double mbr = apply_mbr_action(agent, actions[k], config_.emulator.max_mbr(), rng_);
            const auto& targets = config_.freeze_out_of_scope ? agent.ue_scope : net_.service(agent.service).ues;
            netemu::set_mbr(net_, targets, mbr);
        } else {
            netemu::set_priority(net_, agent.service, apply_priority_action(agent, actions[k]));
        }
    }
    netemu::run_ticks(net_, settle_ticks(group));
    ++steps_;

    StepResult res;
    res.obs = observe(group);
    const auto r = local_rewards();
    for (const auto& agent : agents) res.local_rewards.push_back(r[index_of(agent.service)]);
    res.global = current_global_reward();
    res.done = steps_ >= config_.horizon || all_satisfied();
    return res;
}

std::vector<UeRate> Environment::ue_rates() const {
    std::vector<UeRate> rates;
    rates.reserve(net_.ues.size());
    for (const auto& ue : net_.ues) rates.push_back({ue.smoothed_delivered(), ue.mbr});
    return rates;
}

double Environment::scoped_mbr(ServiceKind service) const {
    const auto& scope = groups_[index_of(service)].in_scope;
    return net_.ues[static_cast<std::size_t>(scope.front())].mbr;
}

}  // namespace imarl::env
