#include <doctest.h>

#include "imarl/supervisor.hpp"
#include "oracles.hpp"

using namespace imarl;
using namespace imarl::supervisor;

namespace {

env::EnvConfig capacity_config(double total_mbps) {
    env::EnvConfig cfg;
    cfg.emulator.capacity_mbps = total_mbps;
    cfg.emulator.capacity_scope = netemu::CapacityScope::NETWORK_TOTAL;
    return cfg;
}

const std::array<double, env::kServiceCount> kTargets{3.0, 0.02, 0.04};

}  // namespace

TEST_CASE("decide: literal rule examples") {
    const std::vector<UeSnapshot> capped{{1.0, 1.0}, {2.0, 2.0}, {1.5, 1.5}};
    CHECK(decide(capped, 0.05) == env::AgentGroup::MBR);
    const std::vector<UeSnapshot> starved{{1.0, 1.0}, {0.4, 1.0}};
    CHECK(decide(starved, 0.05) == env::AgentGroup::PRIORITY);
    const std::vector<UeSnapshot> close{{0.97, 1.0}};
    CHECK(decide(close, 0.05) == env::AgentGroup::MBR);
    CHECK(decide(close, 0.0) == env::AgentGroup::PRIORITY);
    CHECK_THROWS_AS(decide(std::vector<UeSnapshot>{}, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(decide(close, -1.0), std::invalid_argument);
}

TEST_CASE("decide: a UE asking for less than its MBR counts as capped by its demand") {
    const std::vector<UeSnapshot> light{{0.36, 1.0, 0.36}, {1.0, 1.0, 2.0}};
    CHECK(decide(light, 0.05) == env::AgentGroup::MBR);
    const std::vector<UeSnapshot> short_of_demand{{0.2, 1.0, 0.36}};
    CHECK(decide(short_of_demand, 0.05) == env::AgentGroup::PRIORITY);
}

TEST_CASE("setup names") {
    for (auto s : {Setup::ONLY_PRIORITY, Setup::ONLY_MBR, Setup::SUPERVISED_BOTH}) {
        CHECK(setup_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(setup_from_string("both"), std::invalid_argument);
}

TEST_CASE("run_episode: no UE reaches its limit, priority agents act throughout") {
    std::mt19937_64 rng(1);
    const auto prio = testing::random_net(rng), mbr = testing::random_net(rng);
    env::Environment environment(capacity_config(0.5), 3);
    environment.reset(kTargets);
    const auto trace = run_episode(environment, {&prio, &mbr}, Setup::SUPERVISED_BOTH, SupervisorConfig{}, 20, {});
    REQUIRE(trace.active_per_step.size() == 20);
    for (auto g : trace.active_per_step) CHECK(g == env::AgentGroup::PRIORITY);
    CHECK(trace.rows.size() == 60);
}

TEST_CASE("run_episode: every UE at its limit, MBR agents take the first window") {
    std::mt19937_64 rng(2);
    const auto prio = testing::random_net(rng), mbr = testing::random_net(rng);
    env::Environment environment(capacity_config(100.0), 3);
    environment.reset(kTargets);
    const auto trace = run_episode(environment, {&prio, &mbr}, Setup::SUPERVISED_BOTH, SupervisorConfig{}, 10, {});
    for (int t = 0; t < 5; ++t) CHECK(trace.active_per_step[static_cast<std::size_t>(t)] == env::AgentGroup::MBR);
}

TEST_CASE("run_episode: the active group only changes on the cadence") {
    std::mt19937_64 rng(3);
    const auto prio = testing::random_net(rng), mbr = testing::random_net(rng);
    env::Environment environment(capacity_config(12.0), 4);
    environment.reset(kTargets);
    SupervisorConfig sup;
    sup.cadence = 5;
    const auto trace = run_episode(environment, {&prio, &mbr}, Setup::SUPERVISED_BOTH, sup, 40, {});
    for (std::size_t t = 1; t < trace.active_per_step.size(); ++t) {
        if (t % 5 != 0) CHECK(trace.active_per_step[t] == trace.active_per_step[t - 1]);
    }
}

TEST_CASE("run_episode: single-knob setups never touch the other knob") {
    std::mt19937_64 rng(4);
    const auto prio = testing::random_net(rng), mbr = testing::random_net(rng);
    {
        env::Environment environment(capacity_config(4.0), 5);
        environment.reset(kTargets);
        const auto trace = run_episode(environment, {&prio, nullptr}, Setup::ONLY_PRIORITY, SupervisorConfig{}, 12, {});
        for (const auto& row : trace.rows) {
            CHECK(row.active == env::AgentGroup::PRIORITY);
            CHECK(row.mbr == 1.0);
        }
    }
    {
        env::Environment environment(capacity_config(4.0), 5);
        environment.reset(kTargets);
        const auto trace = run_episode(environment, {nullptr, &mbr}, Setup::ONLY_MBR, SupervisorConfig{}, 12, {});
        for (const auto& row : trace.rows) {
            CHECK(row.active == env::AgentGroup::MBR);
            CHECK(row.priority == 7);
        }
    }
}

TEST_CASE("run_episode: missing policies and bad goal changes are rejected up front") {
    std::mt19937_64 rng(5);
    const auto prio = testing::random_net(rng);
    env::Environment environment(capacity_config(20.0), 1);
    environment.reset(kTargets);
    const auto tick = environment.network().tick;
    CHECK_THROWS_AS(run_episode(environment, {&prio, nullptr}, Setup::SUPERVISED_BOTH, SupervisorConfig{}, 5, {}),
                    std::invalid_argument);
    const std::vector<GoalChange> late{{9, env::ServiceKind::CV, 3.5}};
    CHECK_THROWS_AS(run_episode(environment, {&prio, nullptr}, Setup::ONLY_PRIORITY, SupervisorConfig{}, 5, late),
                    std::invalid_argument);
    CHECK(environment.network().tick == tick);
}

TEST_CASE("run_episode: goal changes take effect at their step only for their service") {
    std::mt19937_64 rng(6);
    const auto prio = testing::random_net(rng);
    env::Environment environment(capacity_config(20.0), 1);
    environment.reset(kTargets);
    const std::vector<GoalChange> change{{3, env::ServiceKind::CV, 3.5}};
    const auto trace = run_episode(environment, {&prio, nullptr}, Setup::ONLY_PRIORITY, SupervisorConfig{}, 6, change);
    for (const auto& row : trace.rows) {
        if (row.service == env::ServiceKind::CV) {
            CHECK(row.goal == (row.step < 3 ? 3.0 : 3.5));
        } else {
            CHECK(row.goal == kTargets[netemu::index_of(row.service)]);
        }
    }
}

TEST_CASE("run_episode is deterministic for a fixed environment seed") {
    std::mt19937_64 rng(7);
    const auto prio = testing::random_net(rng), mbr = testing::random_net(rng);
    auto run = [&] {
        env::Environment environment(capacity_config(8.0), 11);
        environment.reset(kTargets);
        return run_episode(environment, {&prio, &mbr}, Setup::SUPERVISED_BOTH, SupervisorConfig{}, 15, {});
    };
    const auto a = run(), b = run();
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        CHECK(a.rows[k].observed == b.rows[k].observed);
        CHECK(a.rows[k].mbr == b.rows[k].mbr);
        CHECK(a.rows[k].active == b.rows[k].active);
    }
}
