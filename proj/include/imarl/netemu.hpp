// Discrete-time emulator of three service types sharing gNB airlink capacity.
//
// One tick is one emulated second. Agents act on two knobs, the per-service
// packet priority and the per-UE maximum bit rate (MBR); both writes land after
// a configurable delay. KPIs are read back as trailing-window means.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace imarl::netemu {

enum class ServiceKind { CV = 0, URLLC = 1, MIOT = 2 };
enum class KpiKind { QOE, PLR };
enum class Direction { AT_LEAST, AT_MOST };
enum class Knob { PRIORITY, MBR };
enum class CapacityScope { PER_GNB, NETWORK_TOTAL };

inline constexpr std::array<ServiceKind, 3> kAllServices = {ServiceKind::CV, ServiceKind::URLLC,
                                                            ServiceKind::MIOT};
inline constexpr std::size_t kServiceCount = kAllServices.size();

inline constexpr std::size_t index_of(ServiceKind s) { return static_cast<std::size_t>(s); }

std::string_view to_string(ServiceKind s);
ServiceKind service_from_string(std::string_view name);
std::string_view to_string(KpiKind k);
std::string_view to_string(CapacityScope s);
CapacityScope capacity_scope_from_string(std::string_view name);

struct KpiRange {
    double lo = 0.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Static description of a service type: which KPI it is judged by and that KPI's range.
struct ServiceType {
    ServiceKind kind = ServiceKind::CV;
    KpiKind kpi_kind = KpiKind::QOE;
    KpiRange kpi_range{1.0, 5.0};

    static ServiceType of(ServiceKind kind);
    Direction direction() const { return kpi_kind == KpiKind::QOE ? Direction::AT_LEAST : Direction::AT_MOST; }
};

inline constexpr int kMinPriority = 1;
inline constexpr int kMaxPriority = 100;
inline constexpr double kMinMbr = 1.0;

struct EmulatorConfig {
    int gnb_count = 2;
    int ues_per_service = 4;
    double capacity_mbps = 20.0;
    CapacityScope capacity_scope = CapacityScope::PER_GNB;
    /// Mean downlink demand per UE, indexed by ServiceKind.
    std::array<double, kServiceCount> offered_mbps = {2.0, 0.5, 0.05};
    /// Offered traffic is scaled by U[1 - a, 1 + a] every tick.
    double noise_amplitude = 0.1;
    int initial_priority = 7;
    double initial_mbr = 1.0;
    int priority_delay_ticks = 40;
    int mbr_delay_ticks = 10;
    int kpi_window_ticks = 10;

    /// Capacity available to one gNB under the configured scope.
    double gnb_capacity() const;
    /// Upper bound of the MBR knob (the airlink bandwidth).
    double max_mbr() const { return capacity_mbps; }
};

struct Ue {
    int id = 0;
    ServiceKind service = ServiceKind::CV;
    int gnb = 0;
    double offered_rate = 0.0;    ///< mean demand (Mbps)
    double mbr = kMinMbr;         ///< current cap (Mbps)
    double offered_tick = 0.0;    ///< demand drawn for the last tick
    double delivered_rate = 0.0;  ///< last tick
    double plr = 0.0;
    double qoe = 1.0;
    std::deque<double> delivered_window;
    std::deque<double> plr_window;
    std::deque<double> qoe_window;
    std::deque<double> demand_window;  ///< min(offered, MBR) per tick

    double smoothed_demand() const;
    double smoothed_delivered() const;
    double smoothed_plr() const;
    double smoothed_qoe() const;
};

struct Service {
    ServiceType type;
    int priority = 7;
    std::vector<int> ues;
};

struct Gnb {
    int id = 0;
    double capacity = 0.0;
    std::vector<int> attached;
};

struct PendingEffect {
    Knob knob = Knob::PRIORITY;
    ServiceKind service = ServiceKind::CV;  ///< PRIORITY target
    std::vector<int> ues;                   ///< MBR target group
    double new_value = 0.0;
    std::int64_t issue_tick = 0;
    std::int64_t apply_at_tick = 0;
};

/// Record of a knob write that fell outside the knob's range and was clamped.
struct ClampEvent {
    std::int64_t tick = 0;
    Knob knob = Knob::PRIORITY;
    double requested = 0.0;
    double applied = 0.0;
};

struct NetworkState {
    EmulatorConfig config;
    std::int64_t tick = 0;
    std::array<Service, kServiceCount> services;
    std::vector<Ue> ues;
    std::vector<Gnb> gnbs;
    std::vector<PendingEffect> pending;
    std::vector<ClampEvent> clamp_log;
    std::mt19937_64 rng;

    const Service& service(ServiceKind s) const { return services[index_of(s)]; }
    Service& service(ServiceKind s) { return services[index_of(s)]; }
};

/// Builds the initial network: UEs of every service spread evenly over the gNBs,
/// all services at the initial priority and all UEs at the initial MBR.
/// Throws std::invalid_argument on a non-positive capacity, no gNBs, or UE counts
/// that do not divide evenly across gNBs.
NetworkState build_topology(const EmulatorConfig& cfg, std::uint64_t seed);

/// Advances the emulator by one tick.
void tick(NetworkState& state);
void run_ticks(NetworkState& state, int count);

struct AirlinkDemand {
    double demand = 0.0;  ///< min(offered this tick, MBR)
    double weight = 1.0;
};

/// Weighted max-min fair split of `capacity` by progressive filling.
std::vector<double> allocate_airlink(double capacity, std::span<const AirlinkDemand> ues);

/// Scheduler weight of a packet priority: 101 - priority. Throws std::out_of_range.
double priority_weight(int priority);

/// Linear QoE: 1 + 4 * delivered / offered, 1 when nothing is offered.
double qoe_model(double delivered, double offered);

/// Packet-loss ratio, counting both MBR shaping and congestion drops.
double plr_model(double delivered, double offered);

/// Rank-selected KPI of a service: for QoE the k-th largest smoothed value, for PLR
/// the k-th smallest, where k = ceil(percent / 100 * n).
double observe_kpi(const NetworkState& state, ServiceKind service, int percent);

/// Enqueue a priority write; lands after the priority delay. Out-of-range values are
/// clamped to [1, 100] and logged.
void set_priority(NetworkState& state, ServiceKind service, double value);

/// Enqueue an MBR write for a group of UEs; lands after the MBR delay. Out-of-range
/// values are clamped to [1, alpha] and logged.
void set_mbr(NetworkState& state, std::span<const int> ue_ids, double value);

/// Versioned debug snapshot.
nlohmann::json snapshot_json(const NetworkState& state);

}  // namespace imarl::netemu
