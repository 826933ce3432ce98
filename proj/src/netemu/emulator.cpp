#include "imarl/netemu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace imarl::netemu {

namespace {

double window_mean(const std::deque<double>& w, double empty_value) {
    if (w.empty()) return empty_value;
    return std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
}

void push_window(std::deque<double>& w, double v, int size) {
    w.push_back(v);
    while (static_cast<int>(w.size()) > size) w.pop_front();
}

void apply_due_effects(NetworkState& state) {
    auto due = [&](const PendingEffect& e) { return e.apply_at_tick <= state.tick; };
    for (const auto& e : state.pending) {
        if (!due(e)) continue;
        if (e.knob == Knob::PRIORITY) {
            state.service(e.service).priority = static_cast<int>(e.new_value);
        } else {
            for (int id : e.ues) state.ues[static_cast<std::size_t>(id)].mbr = e.new_value;
        }
    }
    std::erase_if(state.pending, due);
}

}  // namespace

std::string_view to_string(ServiceKind s) {
    switch (s) {
        case ServiceKind::CV: return "cv";
        case ServiceKind::URLLC: return "urllc";
        case ServiceKind::MIOT: return "miot";
    }
    return "?";
}

ServiceKind service_from_string(std::string_view name) {
    if (name == "cv") return ServiceKind::CV;
    if (name == "urllc") return ServiceKind::URLLC;
    if (name == "miot") return ServiceKind::MIOT;
    throw std::invalid_argument("unknown service '" + std::string(name) + "'");
}

std::string_view to_string(KpiKind k) { return k == KpiKind::QOE ? "qoe" : "plr"; }

std::string_view to_string(CapacityScope s) {
    return s == CapacityScope::PER_GNB ? "per_gnb" : "network_total";
}

CapacityScope capacity_scope_from_string(std::string_view name) {
    if (name == "per_gnb") return CapacityScope::PER_GNB;
    if (name == "network_total") return CapacityScope::NETWORK_TOTAL;
    throw std::invalid_argument("unknown capacity scope '" + std::string(name) + "'");
}

ServiceType ServiceType::of(ServiceKind kind) {
    switch (kind) {
        case ServiceKind::CV: return {kind, KpiKind::QOE, {1.0, 5.0}};
        case ServiceKind::URLLC:
        case ServiceKind::MIOT: return {kind, KpiKind::PLR, {0.0, 1.0}};
    }
    throw std::invalid_argument("bad service kind");
}

double EmulatorConfig::gnb_capacity() const {
    return capacity_scope == CapacityScope::PER_GNB ? capacity_mbps
                                                    : capacity_mbps / static_cast<double>(gnb_count);
}

double Ue::smoothed_demand() const { return window_mean(demand_window, 0.0); }
double Ue::smoothed_delivered() const { return window_mean(delivered_window, 0.0); }
double Ue::smoothed_plr() const { return window_mean(plr_window, 0.0); }
double Ue::smoothed_qoe() const { return window_mean(qoe_window, 1.0); }

NetworkState build_topology(const EmulatorConfig& cfg, std::uint64_t seed) {
    if (cfg.gnb_count < 1) throw std::invalid_argument("at least one gNB is required");
    if (!(cfg.capacity_mbps > 0.0)) throw std::invalid_argument("airlink capacity must be positive");
    if (cfg.ues_per_service < 1 || cfg.ues_per_service % cfg.gnb_count != 0) {
        throw std::invalid_argument("UEs per service (" + std::to_string(cfg.ues_per_service) +
                                    ") must be a positive multiple of the gNB count (" +
                                    std::to_string(cfg.gnb_count) + ")");
    }
    if (cfg.initial_priority < kMinPriority || cfg.initial_priority > kMaxPriority) {
        throw std::invalid_argument("initial priority outside [1, 100]");
    }
    if (cfg.kpi_window_ticks < 1) throw std::invalid_argument("KPI window must be at least one tick");

    NetworkState st;
    st.config = cfg;
    st.rng.seed(seed);
    for (int g = 0; g < cfg.gnb_count; ++g) st.gnbs.push_back({g, cfg.gnb_capacity(), {}});

    int next_id = 0;
    for (ServiceKind kind : kAllServices) {
        Service& svc = st.service(kind);
        svc.type = ServiceType::of(kind);
        svc.priority = cfg.initial_priority;
        for (int i = 0; i < cfg.ues_per_service; ++i) {
            Ue ue;
            ue.id = next_id++;
            ue.service = kind;
            ue.gnb = i % cfg.gnb_count;
            ue.offered_rate = cfg.offered_mbps[index_of(kind)];
            ue.mbr = cfg.initial_mbr;
            svc.ues.push_back(ue.id);
            st.gnbs[static_cast<std::size_t>(ue.gnb)].attached.push_back(ue.id);
            st.ues.push_back(std::move(ue));
        }
    }
    return st;
}

void tick(NetworkState& st) {
    apply_due_effects(st);

    const double a = st.config.noise_amplitude;
    std::uniform_real_distribution<double> noise(1.0 - a, 1.0 + a);
    for (auto& ue : st.ues) {
        // Draw even with zero amplitude so the stream position does not depend on it.
        const double scale = noise(st.rng);
        ue.offered_tick = a > 0.0 ? ue.offered_rate * scale : ue.offered_rate;
    }

    std::vector<AirlinkDemand> demands;
    for (const auto& gnb : st.gnbs) {
        demands.clear();
        for (int id : gnb.attached) {
            const Ue& ue = st.ues[static_cast<std::size_t>(id)];
            demands.push_back({std::min(ue.offered_tick, ue.mbr), priority_weight(st.service(ue.service).priority)});
        }
        const auto alloc = allocate_airlink(gnb.capacity, demands);
        for (std::size_t i = 0; i < gnb.attached.size(); ++i) {
            Ue& ue = st.ues[static_cast<std::size_t>(gnb.attached[i])];
            ue.delivered_rate = alloc[i];
            ue.plr = plr_model(ue.delivered_rate, ue.offered_tick);
            ue.qoe = qoe_model(ue.delivered_rate, ue.offered_tick);
            const int w = st.config.kpi_window_ticks;
            push_window(ue.demand_window, std::min(ue.offered_tick, ue.mbr), w);
            push_window(ue.delivered_window, ue.delivered_rate, w);
            push_window(ue.plr_window, ue.plr, w);
            push_window(ue.qoe_window, ue.qoe, w);
        }
    }
    ++st.tick;
    // Effects due at the new tick are visible in the state right away.
    apply_due_effects(st);
}

void run_ticks(NetworkState& state, int count) {
    for (int i = 0; i < count; ++i) tick(state);
}

double priority_weight(int priority) {
    if (priority < kMinPriority || priority > kMaxPriority) {
        throw std::out_of_range("priority " + std::to_string(priority) + " outside [1, 100]");
    }
    return static_cast<double>(kMaxPriority + 1 - priority);
}

double qoe_model(double delivered, double offered) {
    if (!(offered > 0.0)) return 1.0;
    return std::clamp(1.0 + 4.0 * (delivered / offered), 1.0, 5.0);
}

double plr_model(double delivered, double offered) {
    if (!(offered > 0.0)) return 0.0;
    return std::clamp((offered - delivered) / offered, 0.0, 1.0);
}

double observe_kpi(const NetworkState& state, ServiceKind service, int percent) {
    const Service& svc = state.service(service);
    const int n = static_cast<int>(svc.ues.size());
    if (n == 0) throw std::invalid_argument("service has no UEs");
    if (percent <= 0 || percent > 100) throw std::invalid_argument("percent must be in (0, 100]");
    const int k = (percent * n + 99) / 100;

    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n));
    const bool qoe = svc.type.kpi_kind == KpiKind::QOE;
    for (int id : svc.ues) {
        const Ue& ue = state.ues[static_cast<std::size_t>(id)];
        values.push_back(qoe ? ue.smoothed_qoe() : ue.smoothed_plr());
    }
    if (qoe) {
        std::sort(values.begin(), values.end(), std::greater<>());
    } else {
        std::sort(values.begin(), values.end());
    }
    return values[static_cast<std::size_t>(k - 1)];
}

void set_priority(NetworkState& state, ServiceKind service, double value) {
    const double applied = std::clamp(std::round(value), double(kMinPriority), double(kMaxPriority));
    if (applied != value) state.clamp_log.push_back({state.tick, Knob::PRIORITY, value, applied});
    PendingEffect e;
    e.knob = Knob::PRIORITY;
    e.service = service;
    e.new_value = applied;
    e.issue_tick = state.tick;
    e.apply_at_tick = state.tick + state.config.priority_delay_ticks;
    state.pending.push_back(std::move(e));
}

void set_mbr(NetworkState& state, std::span<const int> ue_ids, double value) {
    const double applied = std::clamp(value, kMinMbr, state.config.max_mbr());
    if (applied != value) state.clamp_log.push_back({state.tick, Knob::MBR, value, applied});
    for (int id : ue_ids) {
        if (id < 0 || id >= static_cast<int>(state.ues.size())) {
            throw std::out_of_range("unknown UE id " + std::to_string(id));
        }
    }
    PendingEffect e;
    e.knob = Knob::MBR;
    e.ues.assign(ue_ids.begin(), ue_ids.end());
    e.new_value = applied;
    e.issue_tick = state.tick;
    e.apply_at_tick = state.tick + state.config.mbr_delay_ticks;
    state.pending.push_back(std::move(e));
}

}  // namespace imarl::netemu
