#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "imarl/evalkit.hpp"

namespace imarl::evalkit {

namespace {

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

void fill_spreads(ScenarioResult& result) {
    for (std::size_t i = 0; i < env::kServiceCount; ++i) {
        std::vector<double> m, sat;
        for (const auto& r : result.runs) {
            m.push_back(r.stats[i].m);
            sat.push_back(r.stats[i].satisfaction);
        }
        result.m[i] = spread(m);
        result.satisfaction[i] = spread(sat);
    }
}

}  // namespace

double metric_m(std::span<const double> observed, std::span<const double> goals) {
    if (observed.empty()) throw std::invalid_argument("metric_m: empty run");
    if (observed.size() != goals.size()) throw std::invalid_argument("metric_m: observed and goal lengths differ");
    double sum = 0.0;
    for (std::size_t t = 0; t < observed.size(); ++t) sum += std::abs(observed[t] - goals[t]);
    return sum / static_cast<double>(observed.size());
}

double satisfaction_fraction(std::span<const double> observed, std::span<const double> goals, env::Direction dir) {
    if (observed.empty()) throw std::invalid_argument("satisfaction_fraction: empty run");
    if (observed.size() != goals.size()) {
        throw std::invalid_argument("satisfaction_fraction: observed and goal lengths differ");
    }
    std::size_t ok = 0;
    for (std::size_t t = 0; t < observed.size(); ++t) ok += env::intent_satisfied(dir, observed[t], goals[t]);
    return static_cast<double>(ok) / static_cast<double>(observed.size());
}

void ScenarioConfig::validate() const {
    env.validate();
    supervisor.validate();
    if (horizon < 1) throw std::invalid_argument("scenario horizon must be positive");
    if (seeds.size() < 5) throw std::invalid_argument("a scenario needs at least 5 seeds");
    auto sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("scenario seeds must be distinct");
    }
    if (schedule.empty() || schedule.front().step != 0) {
        throw std::invalid_argument("intent schedule must start at step 0");
    }
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const auto& phase = schedule[k];
        if (phase.step >= horizon) throw std::invalid_argument("intent schedule step outside the horizon");
        if (k > 0 && phase.step <= schedule[k - 1].step) {
            throw std::invalid_argument("intent schedule steps must be strictly increasing");
        }
        for (std::size_t i = 0; i < env::kServiceCount; ++i) {
            const auto& intent = phase.intents[i];
            intent.validate();
            const auto& first = schedule.front().intents[i];
            if (intent.service != first.service || intent.percent != first.percent) {
                throw std::invalid_argument("intent " + intent.id + ": later phases may only change targets");
            }
            if (k == 0 && intent.target != env.intents[i].target) {
                throw std::invalid_argument("environment intents must match the first schedule phase");
            }
        }
    }
}

std::vector<supervisor::GoalChange> ScenarioConfig::goal_changes() const {
    std::vector<supervisor::GoalChange> changes;
    for (std::size_t k = 1; k < schedule.size(); ++k) {
        for (std::size_t i = 0; i < env::kServiceCount; ++i) {
            const auto& now = schedule[k].intents[i];
            if (now.target != schedule[k - 1].intents[i].target) {
                changes.push_back({schedule[k].step, now.service, now.target});
            }
        }
    }
    return changes;
}

Spread spread(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("spread: no values");
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    return {quantile(0.5), quantile(0.25), quantile(0.75)};
}

std::vector<std::uint64_t> ScenarioResult::seeds() const {
    std::vector<std::uint64_t> s;
    for (const auto& r : runs) s.push_back(r.seed);
    return s;
}

std::array<ServiceStats, env::kServiceCount> trace_stats(const supervisor::EpisodeTrace& trace) {
    std::array<ServiceStats, env::kServiceCount> out{};
    for (auto s : netemu::kAllServices) {
        std::vector<double> o, g;
        for (const auto& row : trace.rows) {
            if (row.service != s) continue;
            o.push_back(row.observed);
            g.push_back(row.goal);
        }
        const auto i = netemu::index_of(s);
        out[i].m = metric_m(o, g);
        out[i].satisfaction = satisfaction_fraction(o, g, netemu::ServiceType::of(s).direction());
    }
    return out;
}

ScenarioResult run_scenario(const ScenarioConfig& scenario, Setup setup, const supervisor::Policies& policies,
                            int jobs) {
    scenario.validate();
    if (jobs < 1) throw std::invalid_argument("jobs must be positive");
    ScenarioResult result;
    result.scenario = scenario.name;
    result.setup = setup;
    std::array<double, env::kServiceCount> goals{};
    for (std::size_t i = 0; i < env::kServiceCount; ++i) goals[i] = scenario.env.intents[i].target;
    const auto changes = scenario.goal_changes();

    // Policies are only read; each seed owns its environment and recurrent state.
    result.runs.resize(scenario.seeds.size());
    auto run_seed = [&](std::size_t k) {
        env::Environment environment(scenario.env, scenario.seeds[k]);
        environment.reset(goals);
        auto& run = result.runs[k];
        run.seed = scenario.seeds[k];
        run.trace = supervisor::run_episode(environment, policies, setup, scenario.supervisor, scenario.horizon,
                                            changes);
        run.stats = trace_stats(run.trace);
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), scenario.seeds.size());
    if (workers <= 1) {
        for (std::size_t k = 0; k < scenario.seeds.size(); ++k) run_seed(k);
    } else {
        std::vector<std::exception_ptr> errors(scenario.seeds.size());
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t k = w; k < scenario.seeds.size(); k += workers) {
                    try {
                        run_seed(k);
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    fill_spreads(result);
    return result;
}

Comparison compare_setups(std::span<const ScenarioResult> results) {
    if (results.empty()) throw std::invalid_argument("compare_setups: no results");
    const auto seeds = results.front().seeds();
    Comparison cmp;
    for (const auto& r : results) {
        if (r.seeds() != seeds) throw std::invalid_argument("compare_setups: results use different seed lists");
        cmp.setups.push_back(r.setup);
        std::array<ComparisonCell, env::kServiceCount> row{};
        for (std::size_t i = 0; i < env::kServiceCount; ++i) row[i].median_m = r.m[i].median;
        cmp.cells.push_back(row);
    }
    for (std::size_t i = 0; i < env::kServiceCount; ++i) {
        double best = cmp.cells.front()[i].median_m;
        for (const auto& row : cmp.cells) best = std::min(best, row[i].median_m);
        const auto count = std::count_if(cmp.cells.begin(), cmp.cells.end(),
                                         [&](const auto& row) { return row[i].median_m == best; });
        if (count == 1 && cmp.cells.size() > 1) {
            for (auto& row : cmp.cells) row[i].winner = row[i].median_m == best;
        }
    }
    return cmp;
}

namespace {

constexpr const char* kTraceHeader = "seed,step,tick,service,observed,goal,priority,mbr,reward,global_reward,active_group\n";

void write_rows(std::ostream& out, const SeedRun& run) {
    for (const auto& r : run.trace.rows) {
        out << run.seed << ',' << r.step << ',' << r.tick << ',' << netemu::to_string(r.service) << ','
            << num(r.observed) << ',' << num(r.goal) << ',' << r.priority << ',' << num(r.mbr) << ','
            << num(r.reward) << ',' << num(r.global_reward) << ',' << env::to_string(r.active) << '\n';
    }
}

}  // namespace

std::string trace_csv(const ScenarioResult& result) {
    std::ostringstream out;
    out << kTraceHeader;
    for (const auto& run : result.runs) write_rows(out, run);
    return out.str();
}

std::string trace_csv(const SeedRun& run) {
    std::ostringstream out;
    out << kTraceHeader;
    write_rows(out, run);
    return out.str();
}

nlohmann::json summary_json(const ScenarioResult& result) {
    nlohmann::json services = nlohmann::json::object();
    for (auto s : netemu::kAllServices) {
        const auto i = netemu::index_of(s);
        nlohmann::json per_seed = nlohmann::json::array();
        for (const auto& r : result.runs) {
            per_seed.push_back({{"seed", r.seed}, {"m", r.stats[i].m}, {"satisfaction", r.stats[i].satisfaction}});
        }
        services[std::string(netemu::to_string(s))] = {
            {"m", {{"median", result.m[i].median}, {"q1", result.m[i].q1}, {"q3", result.m[i].q3}}},
            {"satisfaction",
             {{"median", result.satisfaction[i].median},
              {"q1", result.satisfaction[i].q1},
              {"q3", result.satisfaction[i].q3}}},
            {"per_seed", std::move(per_seed)}};
    }
    return {{"scenario", result.scenario},
            {"setup", supervisor::to_string(result.setup)},
            {"seeds", result.seeds()},
            {"services", std::move(services)}};
}

ScenarioResult result_from_summary(const nlohmann::json& j) {
    try {
        ScenarioResult result;
        result.scenario = j.at("scenario").get<std::string>();
        result.setup = supervisor::setup_from_string(j.at("setup").get<std::string>());
        const auto seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (seeds.empty()) throw std::invalid_argument("summary lists no seeds");
        result.runs.resize(seeds.size());
        for (std::size_t k = 0; k < seeds.size(); ++k) result.runs[k].seed = seeds[k];
        for (auto s : netemu::kAllServices) {
            const auto i = netemu::index_of(s);
            const auto& per_seed = j.at("services").at(std::string(netemu::to_string(s))).at("per_seed");
            if (per_seed.size() != seeds.size()) throw std::invalid_argument("summary per-seed rows do not match seeds");
            for (std::size_t k = 0; k < seeds.size(); ++k) {
                if (per_seed[k].at("seed").get<std::uint64_t>() != seeds[k]) {
                    throw std::invalid_argument("summary per-seed rows out of order");
                }
                result.runs[k].stats[i].m = per_seed[k].at("m").get<double>();
                result.runs[k].stats[i].satisfaction = per_seed[k].at("satisfaction").get<double>();
            }
        }
        fill_spreads(result);
        return result;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed summary: ") + e.what());
    }
}

std::string comparison_csv(const Comparison& cmp) {
    std::ostringstream out;
    out << "setup";
    for (auto s : netemu::kAllServices) out << ",m_" << netemu::to_string(s) << ",winner_" << netemu::to_string(s);
    out << '\n';
    for (std::size_t k = 0; k < cmp.setups.size(); ++k) {
        out << supervisor::to_string(cmp.setups[k]);
        for (const auto& cell : cmp.cells[k]) out << ',' << num(cell.median_m) << ',' << (cell.winner ? 1 : 0);
        out << '\n';
    }
    return out.str();
}

}  // namespace imarl::evalkit
