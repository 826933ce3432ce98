#include "imarl/config.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace imarl::config {

namespace {

using nlohmann::json;

template <typename T>
T convert(const json& j, const std::string& where) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

// Rethrows validation failures from the domain types as configuration errors.
template <typename F>
void checked(const std::string& where, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

std::array<double, env::kServiceCount> read_per_service(const json& j, const std::string& where) {
    require_known_keys(j, {"cv", "urllc", "miot"}, where);
    std::array<double, env::kServiceCount> out{};
    for (auto s : netemu::kAllServices) {
        const std::string key(netemu::to_string(s));
        if (!j.contains(key)) throw ConfigError(where + "." + key + ": missing");
        out[netemu::index_of(s)] = convert<double>(j.at(key), where + "." + key);
    }
    return out;
}

json per_service_json(const std::array<double, env::kServiceCount>& v) {
    json j = json::object();
    for (auto s : netemu::kAllServices) j[std::string(netemu::to_string(s))] = v[netemu::index_of(s)];
    return j;
}

netemu::KpiRange read_range(const json& j, const std::string& where) {
    const auto v = convert<std::vector<double>>(j, where);
    if (v.size() != 2) throw ConfigError(where + ": expected [lo, hi]");
    return {v[0], v[1]};
}

netemu::EmulatorConfig parse_emulator(const json& j) {
    const std::string where = "emulator";
    require_known_keys(j,
                       {"gnb_count", "ues_per_service", "capacity_mbps", "capacity_scope", "offered_mbps",
                        "noise_amplitude", "initial_priority", "initial_mbr", "priority_delay_ticks",
                        "mbr_delay_ticks", "kpi_window_ticks"},
                       where);
    netemu::EmulatorConfig c;
    read_optional(j, "gnb_count", c.gnb_count, where);
    read_optional(j, "ues_per_service", c.ues_per_service, where);
    read_optional(j, "capacity_mbps", c.capacity_mbps, where);
    if (j.contains("capacity_scope")) {
        const auto scope = convert<std::string>(j.at("capacity_scope"), where + ".capacity_scope");
        checked(where + ".capacity_scope", [&] { c.capacity_scope = netemu::capacity_scope_from_string(scope); });
    }
    if (j.contains("offered_mbps")) c.offered_mbps = read_per_service(j.at("offered_mbps"), where + ".offered_mbps");
    read_optional(j, "noise_amplitude", c.noise_amplitude, where);
    read_optional(j, "initial_priority", c.initial_priority, where);
    read_optional(j, "initial_mbr", c.initial_mbr, where);
    read_optional(j, "priority_delay_ticks", c.priority_delay_ticks, where);
    read_optional(j, "mbr_delay_ticks", c.mbr_delay_ticks, where);
    read_optional(j, "kpi_window_ticks", c.kpi_window_ticks, where);
    if (c.gnb_count < 1 || c.ues_per_service < 1) throw ConfigError(where + ": topology sizes must be positive");
    if (!(c.capacity_mbps > 0.0)) throw ConfigError(where + ".capacity_mbps: must be positive");
    if (c.noise_amplitude < 0.0 || c.noise_amplitude >= 1.0) {
        throw ConfigError(where + ".noise_amplitude: must lie in [0, 1)");
    }
    for (double r : c.offered_mbps) {
        if (r < 0.0) throw ConfigError(where + ".offered_mbps: rates must be non-negative");
    }
    if (c.priority_delay_ticks < 0 || c.mbr_delay_ticks < 0 || c.kpi_window_ticks < 1) {
        throw ConfigError(where + ": delays must be non-negative and the KPI window positive");
    }
    return c;
}

json emulator_json(const netemu::EmulatorConfig& c) {
    return {{"gnb_count", c.gnb_count},
            {"ues_per_service", c.ues_per_service},
            {"capacity_mbps", c.capacity_mbps},
            {"capacity_scope", netemu::to_string(c.capacity_scope)},
            {"offered_mbps", per_service_json(c.offered_mbps)},
            {"noise_amplitude", c.noise_amplitude},
            {"initial_priority", c.initial_priority},
            {"initial_mbr", c.initial_mbr},
            {"priority_delay_ticks", c.priority_delay_ticks},
            {"mbr_delay_ticks", c.mbr_delay_ticks},
            {"kpi_window_ticks", c.kpi_window_ticks}};
}

// A phase lists intents by service. Phase 0 must name all three; later phases
// inherit what they leave out from the previous phase.
evalkit::IntentPhase parse_phase(const json& j, const evalkit::IntentPhase* previous, const std::string& where) {
    require_known_keys(j, {"step", "intents"}, where);
    evalkit::IntentPhase phase;
    if (!j.contains("step")) throw ConfigError(where + ".step: missing");
    phase.step = convert<int>(j.at("step"), where + ".step");
    if (previous) phase.intents = previous->intents;
    if (!j.contains("intents") || !j.at("intents").is_array()) throw ConfigError(where + ".intents: expected a list");
    std::array<bool, env::kServiceCount> seen{};
    for (std::size_t k = 0; k < j.at("intents").size(); ++k) {
        const auto& ij = j.at("intents")[k];
        const std::string iw = where + ".intents[" + std::to_string(k) + "]";
        require_known_keys(ij, {"id", "service", "percent", "target"}, iw);
        if (!ij.contains("service")) throw ConfigError(iw + ".service: missing");
        if (!ij.contains("target")) throw ConfigError(iw + ".target: missing");
        env::ServiceKind service{};
        const auto name = convert<std::string>(ij.at("service"), iw + ".service");
        checked(iw + ".service", [&] { service = netemu::service_from_string(name); });
        const auto i = netemu::index_of(service);
        if (seen[i]) throw ConfigError(iw + ": service listed twice in one phase");
        seen[i] = true;
        auto& intent = phase.intents[i];
        std::string id = previous ? intent.id : "";
        int percent = previous ? intent.percent : 100;
        read_optional(ij, "id", id, iw);
        read_optional(ij, "percent", percent, iw);
        const double target = convert<double>(ij.at("target"), iw + ".target");
        if (id.empty()) id = std::string(netemu::to_string(service));
        checked(iw, [&] {
            intent = env::Intent::for_service(id, service, percent, target);
            intent.validate();
        });
    }
    if (!previous && !(seen[0] && seen[1] && seen[2])) {
        throw ConfigError(where + ".intents: the first phase must name cv, urllc and miot");
    }
    return phase;
}

json intent_json(const env::Intent& i) {
    return {{"id", i.id}, {"service", netemu::to_string(i.service)}, {"percent", i.percent}, {"target", i.target}};
}

env::EnvConfig parse_env(const json& root, evalkit::ScenarioConfig& scenario) {
    env::EnvConfig e;
    if (root.contains("emulator")) e.emulator = parse_emulator(root.at("emulator"));
    if (root.contains("penalties")) e.penalties = read_per_service(root.at("penalties"), "penalties");
    if (root.contains("intent_schedule")) {
        const auto& sj = root.at("intent_schedule");
        if (!sj.is_array() || sj.empty()) throw ConfigError("intent_schedule: expected a non-empty list");
        scenario.schedule.clear();
        for (std::size_t k = 0; k < sj.size(); ++k) {
            const auto* prev = k == 0 ? nullptr : &scenario.schedule.back();
            scenario.schedule.push_back(parse_phase(sj[k], prev, "intent_schedule[" + std::to_string(k) + "]"));
        }
    }
    e.intents = scenario.schedule.front().intents;
    if (root.contains("environment")) {
        const auto& j = root.at("environment");
        const std::string where = "environment";
        require_known_keys(j,
                           {"horizon", "warmup_ticks", "priority_settle_ticks", "mbr_settle_ticks", "qoe_goal_domain",
                            "plr_goal_domain", "freeze_out_of_scope"},
                           where);
        read_optional(j, "horizon", e.horizon, where);
        read_optional(j, "warmup_ticks", e.warmup_ticks, where);
        read_optional(j, "priority_settle_ticks", e.priority_settle_ticks, where);
        read_optional(j, "mbr_settle_ticks", e.mbr_settle_ticks, where);
        if (j.contains("qoe_goal_domain")) e.qoe_goal_domain = read_range(j.at("qoe_goal_domain"), where + ".qoe_goal_domain");
        if (j.contains("plr_goal_domain")) e.plr_goal_domain = read_range(j.at("plr_goal_domain"), where + ".plr_goal_domain");
        read_optional(j, "freeze_out_of_scope", e.freeze_out_of_scope, where);
    }
    checked("environment", [&] { e.validate(); });
    return e;
}

void parse_evaluation(const json& j, evalkit::ScenarioConfig& s) {
    const std::string where = "evaluation";
    require_known_keys(j, {"horizon", "seeds", "supervisor"}, where);
    read_optional(j, "horizon", s.horizon, where);
    read_optional(j, "seeds", s.seeds, where);
    if (j.contains("supervisor")) {
        const auto& sj = j.at("supervisor");
        const std::string sw = where + ".supervisor";
        require_known_keys(sj, {"cadence", "tolerance", "cap_rule"}, sw);
        read_optional(sj, "cadence", s.supervisor.cadence, sw);
        read_optional(sj, "tolerance", s.supervisor.tolerance, sw);
        if (sj.contains("cap_rule")) {
            const auto rule = convert<std::string>(sj.at("cap_rule"), sw + ".cap_rule");
            if (rule == "mbr") {
                s.supervisor.cap_rule = supervisor::CapRule::MBR;
            } else if (rule == "demand_limited") {
                s.supervisor.cap_rule = supervisor::CapRule::DEMAND_LIMITED;
            } else {
                throw ConfigError(sw + ".cap_rule: expected \"mbr\" or \"demand_limited\"");
            }
        }
    }
}

std::string hex(const unsigned char* data, std::size_t n) {
    std::ostringstream out;
    for (std::size_t i = 0; i < n; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(data[i]);
    return out.str();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    require_known_keys(j,
                       {"name", "emulator", "penalties", "intent_schedule", "environment", "training", "evaluation"},
                       "config");
    RunConfig cfg;
    auto& s = cfg.scenario;
    read_optional(j, "name", s.name, "config");
    s.env = parse_env(j, s);
    if (j.contains("training")) {
        try {
            cfg.hyperparams = qmix::Hyperparams::from_json(j.at("training"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("training: ") + e.what());
        }
    }
    if (j.contains("evaluation")) parse_evaluation(j.at("evaluation"), s);
    checked("evaluation", [&] { s.validate(); });
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

json env_to_json(const env::EnvConfig& e) {
    json intents = json::array();
    for (const auto& i : e.intents) intents.push_back(intent_json(i));
    return {{"emulator", emulator_json(e.emulator)},
            {"penalties", per_service_json(e.penalties)},
            {"intents", std::move(intents)},
            {"environment",
             {{"horizon", e.horizon},
              {"warmup_ticks", e.warmup_ticks},
              {"priority_settle_ticks", e.priority_settle_ticks},
              {"mbr_settle_ticks", e.mbr_settle_ticks},
              {"qoe_goal_domain", {e.qoe_goal_domain.lo, e.qoe_goal_domain.hi}},
              {"plr_goal_domain", {e.plr_goal_domain.lo, e.plr_goal_domain.hi}},
              {"freeze_out_of_scope", e.freeze_out_of_scope}}}};
}

json to_json(const RunConfig& cfg) {
    const auto& s = cfg.scenario;
    json env = env_to_json(s.env);
    json schedule = json::array();
    for (const auto& phase : s.schedule) {
        json intents = json::array();
        for (const auto& i : phase.intents) intents.push_back(intent_json(i));
        schedule.push_back({{"step", phase.step}, {"intents", std::move(intents)}});
    }
    return {{"name", s.name},
            {"emulator", env.at("emulator")},
            {"penalties", env.at("penalties")},
            {"intent_schedule", std::move(schedule)},
            {"environment", env.at("environment")},
            {"training", cfg.hyperparams.to_json()},
            {"evaluation",
             {{"horizon", s.horizon},
              {"seeds", s.seeds},
              {"supervisor",
               {{"cadence", s.supervisor.cadence},
                {"tolerance", s.supervisor.tolerance},
                {"cap_rule", s.supervisor.cap_rule == supervisor::CapRule::MBR ? "mbr" : "demand_limited"}}}}}};
}

std::string canonical_hash(const json& j) {
    // nlohmann::json keeps object keys sorted, so dump() without indent is canonical.
    const std::string text = j.dump();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    return hex(digest, len);
}

json RunManifest::to_json() const {
    return {{"tool_version", tool_version},
            {"command", command},
            {"config_hash", config_hash},
            {"seeds", seeds},
            {"hyperparameters", hyperparameters},
            {"checkpoint_ids", checkpoint_ids},
            {"artifacts", artifacts},
            {"started_at", started_at},
            {"finished_at", finished_at}};
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

std::filesystem::path output_root() {
    if (const char* root = std::getenv("IMARL_OUTPUT_ROOT"); root && *root) return root;
    return std::filesystem::current_path();
}

std::filesystem::path resolve_output(const std::filesystem::path& p) {
    return p.is_absolute() ? p : output_root() / p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace imarl::config
