#include "imarl/netemu.hpp"

namespace imarl::netemu {

nlohmann::json snapshot_json(const NetworkState& state) {
    using nlohmann::json;
    json j;
    j["version"] = 1;
    j["tick"] = state.tick;

    json services = json::array();
    for (const auto& svc : state.services) {
        services.push_back({{"type", to_string(svc.type.kind)},
                            {"kpi_kind", to_string(svc.type.kpi_kind)},
                            {"kpi_range", {svc.type.kpi_range.lo, svc.type.kpi_range.hi}},
                            {"priority", svc.priority},
                            {"ues", svc.ues}});
    }
    j["services"] = std::move(services);

    json ues = json::array();
    for (const auto& ue : state.ues) {
        ues.push_back({{"id", ue.id},
                       {"service", to_string(ue.service)},
                       {"gnb", ue.gnb},
                       {"offered_rate", ue.offered_rate},
                       {"mbr", ue.mbr},
                       {"delivered_rate", ue.delivered_rate},
                       {"plr", ue.smoothed_plr()},
                       {"qoe", ue.smoothed_qoe()}});
    }
    j["ues"] = std::move(ues);

    json gnbs = json::array();
    for (const auto& g : state.gnbs) gnbs.push_back({{"id", g.id}, {"capacity", g.capacity}, {"attached", g.attached}});
    j["gnbs"] = std::move(gnbs);

    json pending = json::array();
    for (const auto& e : state.pending) {
        json p{{"knob", e.knob == Knob::PRIORITY ? "priority" : "mbr"},
               {"new_value", e.new_value},
               {"apply_at_tick", e.apply_at_tick}};
        if (e.knob == Knob::PRIORITY) {
            p["target"] = to_string(e.service);
        } else {
            p["target"] = e.ues;
        }
        pending.push_back(std::move(p));
    }
    j["pending"] = std::move(pending);
    return j;
}

}  // namespace imarl::netemu
