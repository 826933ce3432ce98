#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "imarl/qmix/learner.hpp"
#include "imarl/qmix/network.hpp"
#include "oracles.hpp"

using namespace imarl;
using namespace imarl::qmix;

namespace {

env::JointObservation random_obs(std::mt19937_64& rng, int agents = 3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    env::JointObservation obs;
    for (int i = 0; i < agents; ++i) {
        obs.locals.push_back({});
        obs.features.push_back({u(rng), u(rng), u(rng), u(rng)});
    }
    return obs;
}

// Small net whose outputs do not depend on the input: every agent reports the head
// bias, and the mixer reduces to its bias vectors.
QmixNet toy_net() {
    NetDims dims;
    dims.hidden = 1;
    dims.mixer_embed = 1;
    QmixNet net(dims);
    std::fill(net.params().begin(), net.params().end(), 0.0);
    net.mat(net.head_b)(0) = 0.2;
    net.mat(net.head_b)(1) = 0.7;
    net.mat(net.hyper_w1_b)(0) = 1.0;
    net.mat(net.hyper_w1_b)(1) = 2.0;
    net.mat(net.hyper_w1_b)(2) = 3.0;
    net.mat(net.hyper_b1_b)(0) = 0.5;
    net.mat(net.hyper_w2_b)(0) = -2.0;
    net.mat(net.value_b1)(0) = 0.3;
    net.mat(net.value_w2)(0) = 1.5;
    net.mat(net.value_b2)(0) = 0.1;
    return net;
}

Episode one_step_episode(std::vector<int> actions, double reward, bool terminal) {
    Episode ep;
    Transition t;
    t.features.assign(3, {0.1, 0.2, 0.3, 0.4});
    t.actions = std::move(actions);
    t.reward = reward;
    ep.steps.push_back(t);
    ep.final_features.assign(3, {0.5, 0.5, 0.5, 0.5});
    ep.terminal = terminal;
    return ep;
}

}  // namespace

TEST_CASE("greedy selection and tie rule") {
    CHECK(greedy_index(Eigen::Vector2d(0.2, 0.7)) == 1);
    CHECK(greedy_index(Eigen::Vector2d(0.7, 0.2)) == 0);
    CHECK(greedy_index(Eigen::Vector2d(0.5, 0.5)) == 1);
    CHECK(action_from_index(1) == env::Action::UP);
    CHECK(action_index(env::Action::DOWN) == 0);
}

TEST_CASE("zero weights: Q values equal the head bias") {
    QmixNet net(NetDims{});
    std::fill(net.params().begin(), net.params().end(), 0.0);
    net.mat(net.head_b)(0) = -0.3;
    net.mat(net.head_b)(1) = 0.8;
    std::mt19937_64 rng(1);
    const auto q = agent_q(net, testing::random_inputs(net.dims(), 5, rng));
    for (Eigen::Index t = 0; t < q.rows(); ++t) {
        CHECK(q(t, 0) == -0.3);
        CHECK(q(t, 1) == 0.8);
    }
    CHECK_THROWS_AS(agent_q(net, std::vector<Vec>{}), std::invalid_argument);
}

TEST_CASE("zero hypernet outputs: Q_tot is the state-bias path") {
    std::mt19937_64 rng(2);
    auto net = testing::random_net(rng, 3, 4);
    for (auto id : {net.hyper_w1, net.hyper_w1_b, net.hyper_b1, net.hyper_b1_b, net.hyper_w2, net.hyper_w2_b}) {
        net.mat(id).setZero();
    }
    const Vec state = testing::random_state(net.dims(), rng);
    const Vec qs = Vec::Random(3);
    const Vec v = (net.mat(net.value_w1) * state + net.mat(net.value_b1)).cwiseMax(0.0);
    const double expected = (net.mat(net.value_w2) * v)(0) + net.mat(net.value_b2)(0);
    CHECK(mix(net, qs, state) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("hand-computed TD loss on a toy net") {
    const QmixNet net = toy_net();
    // chosen (0.2, 0.7, 0.7): elu(0.2 + 1.4 + 2.1 + 0.5) * 2 + (1.5 * 0.3 + 0.1) = 8.95
    // greedy next (0.7, 0.7, 0.7): elu(4.2 + 0.5) * 2 + 0.55 = 9.95
    const Episode boot = one_step_episode({0, 1, 1}, 1.0, false);
    const Episode* b1[] = {&boot};
    const double err = 8.95 - (1.0 + 0.5 * 9.95);
    CHECK(td_loss(net, net, b1, 0.5, nullptr) == doctest::Approx(err * err).epsilon(1e-12));

    const Episode term = one_step_episode({0, 1, 1}, 1.0, true);
    const Episode* b2[] = {&term};
    CHECK(td_loss(net, net, b2, 0.5, nullptr) == doctest::Approx(7.95 * 7.95).epsilon(1e-12));
}

TEST_CASE("TD fixed point: gamma 0 and reward equal to Q_tot give zero loss and gradient") {
    std::mt19937_64 rng(3);
    const auto net = testing::random_net(rng, 3, 2);
    Episode ep = testing::random_episode(net.dims(), 1, rng);
    std::vector<double> state;
    Vec qs(3);
    for (int i = 0; i < 3; ++i) {
        const Vec x = agent_input(net.dims(), ep.steps[0].features[static_cast<std::size_t>(i)], -1, i);
        const std::vector<Vec> seq{x};
        qs[i] = agent_q(net, seq)(0, ep.steps[0].actions[static_cast<std::size_t>(i)]);
        state.insert(state.end(), ep.steps[0].features[static_cast<std::size_t>(i)].begin(),
                     ep.steps[0].features[static_cast<std::size_t>(i)].end());
    }
    ep.steps[0].reward = mix(net, qs, Eigen::Map<const Vec>(state.data(), 12));
    const Episode* batch[] = {&ep};
    std::vector<double> grad;
    CHECK(td_loss(net, net, batch, 0.0, &grad) == doctest::Approx(0.0).epsilon(1e-20));
    for (double g : grad) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("gradients match central differences") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 10; ++k) {
        const auto net = testing::random_net(rng);
        const auto inputs = testing::random_inputs(net.dims(), 4, rng);
        CHECK(testing::agent_gradient_error(net, inputs, rng) < 1e-4);
        const Vec qs = Vec::Random(3) * 2.0;
        CHECK(testing::mixer_gradient_error(net, qs, testing::random_state(net.dims(), rng)) < 1e-4);
    }
    const auto online = testing::random_net(rng, 3, 2);
    const auto target = testing::random_net(rng, 3, 2);
    const Episode a = testing::random_episode(online.dims(), 3, rng);
    const Episode b = testing::random_episode(online.dims(), 2, rng);
    const Episode* batch[] = {&a, &b};
    CHECK(testing::td_gradient_error(online, target, batch, 0.9) < 1e-4);
}

TEST_CASE("mixer is monotone in every agent value") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> step(0.0, 2.0);
    for (int k = 0; k < 200; ++k) {
        const auto net = testing::random_net(rng);
        const Vec state = testing::random_state(net.dims(), rng);
        const Vec qs = Vec::Random(3) * 3.0;
        MixCache cache;
        const double base = mix(net, qs, state, &cache);
        std::vector<double> grad(net.size(), 0.0);
        const Vec dq = mix_backward(net, cache, 1.0, grad);
        for (Eigen::Index i = 0; i < 3; ++i) {
            CHECK(dq[i] >= 0.0);
            Vec up = qs;
            up[i] += step(rng);
            CHECK(mix(net, up, state) >= base);
        }
    }
}

TEST_CASE("per-agent greedy choice maximizes Q_tot over all joint actions") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 50; ++k) {
        const auto net = testing::random_net(rng);
        const Vec state = testing::random_state(net.dims(), rng);
        std::array<Eigen::Vector2d, 3> q;
        Vec greedy(3);
        for (int i = 0; i < 3; ++i) {
            q[static_cast<std::size_t>(i)] = Eigen::Vector2d::Random();
            greedy[i] = q[static_cast<std::size_t>(i)](greedy_index(q[static_cast<std::size_t>(i)]));
        }
        double best = -1e300;
        for (int joint = 0; joint < 8; ++joint) {
            Vec chosen(3);
            for (int i = 0; i < 3; ++i) chosen[i] = q[static_cast<std::size_t>(i)]((joint >> i) & 1);
            best = std::max(best, mix(net, chosen, state));
        }
        CHECK(mix(net, greedy, state) == best);
    }
}

TEST_CASE("policy: exploration is reproducible, greedy mode needs no rng") {
    std::mt19937_64 rng(7);
    const auto net = testing::random_net(rng);
    const auto obs = random_obs(rng);
    Policy a(net), b(net);
    std::mt19937_64 ra(99), rb(99);
    for (int t = 0; t < 20; ++t) CHECK(a.act(obs, 1.0, &ra) == b.act(obs, 1.0, &rb));
    Policy c(net);
    CHECK_THROWS_AS(c.act(obs, 0.5, nullptr), std::invalid_argument);
    CHECK_NOTHROW(c.act(obs));
}

TEST_CASE("replay buffer keeps the newest episodes") {
    ReplayBuffer buf(2);
    std::mt19937_64 rng(8);
    CHECK_THROWS_AS(buf.sample(1, rng), std::logic_error);
    for (int k = 0; k < 3; ++k) {
        Episode ep;
        ep.steps.resize(static_cast<std::size_t>(k + 1));
        buf.add(ep);
    }
    CHECK(buf.size() == 2);
    CHECK(buf.at(0).steps.size() == 2);
    CHECK(buf.at(1).steps.size() == 3);
    CHECK(buf.sample(5, rng).size() == 5);
}

TEST_CASE("epsilon schedule") {
    Hyperparams hp;
    hp.episodes = 100;
    CHECK(epsilon_at(hp, 0) == 1.0);
    CHECK(epsilon_at(hp, 30) == doctest::Approx(0.525));
    CHECK(epsilon_at(hp, 60) == doctest::Approx(0.05));
    CHECK(epsilon_at(hp, 99) == doctest::Approx(0.05));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    std::mt19937_64 rng(9);
    auto net = testing::random_net(rng, 3, 2);
    const auto before = net.params();
    const Episode ep = testing::random_episode(net.dims(), 3, rng);
    const Episode* batch[] = {&ep};
    Hyperparams hp;
    hp.learning_rate = 0.0;
    Adam adam;
    for (int k = 0; k < 5; ++k) td_train_step(net, net, adam, batch, hp);
    CHECK(net.params() == before);
}

TEST_CASE("training steps overfit a fixed batch") {
    std::mt19937_64 rng(10);
    auto net = testing::random_net(rng, 4, 3);
    for (double& p : net.params()) p *= 0.3;
    const Episode a = testing::random_episode(net.dims(), 4, rng);
    const Episode b = testing::random_episode(net.dims(), 4, rng);
    const Episode* batch[] = {&a, &b};
    Hyperparams hp;
    hp.learning_rate = 1e-2;
    Adam adam;
    const double first = td_loss(net, net, batch, 0.0, nullptr);
    hp.gamma = 0.0;
    double last = first;
    for (int k = 0; k < 400; ++k) last = td_train_step(net, net, adam, batch, hp).loss;
    CHECK(last < 0.05 * first);
}

TEST_CASE("zero episodes return the initial weights with an empty log") {
    Hyperparams hp;
    hp.episodes = 0;
    hp.dims.hidden = 4;
    const auto a = train_group(env::EnvConfig{}, env::AgentGroup::PRIORITY, hp, 3);
    const auto b = train_group(env::EnvConfig{}, env::AgentGroup::PRIORITY, hp, 3);
    CHECK(a.log.empty());
    CHECK(a.updates == 0);
    CHECK(a.net.params() == b.net.params());
}

TEST_CASE("short training runs are deterministic per seed") {
    Hyperparams hp;
    hp.episodes = 12;
    hp.batch_episodes = 4;
    hp.dims.hidden = 4;
    std::vector<double> ra, rb;
    const auto a = train_group(env::EnvConfig{}, env::AgentGroup::MBR, hp, 5,
                               [&](const TrainLogRow& r) { ra.push_back(r.loss); });
    const auto b = train_group(env::EnvConfig{}, env::AgentGroup::MBR, hp, 5,
                               [&](const TrainLogRow& r) { rb.push_back(r.loss); });
    CHECK(a.net.params() == b.net.params());
    REQUIRE(ra.size() == rb.size());
    // Episodes before the first full batch log NaN as their loss.
    for (std::size_t k = 0; k < ra.size(); ++k) {
        CHECK(std::isnan(ra[k]) == (k + 1 < 4));
        if (!std::isnan(ra[k])) CHECK(ra[k] == rb[k]);
    }
    CHECK(a.log.size() == 12);
}

TEST_CASE("checkpoint round trip preserves greedy choices") {
    std::mt19937_64 rng(11);
    Checkpoint ckpt;
    ckpt.group = env::AgentGroup::MBR;
    ckpt.seed = 4;
    ckpt.hyperparams.dims.hidden = 5;
    QmixNet net(ckpt.hyperparams.dims);
    net.initialize(rng);
    ckpt.weights = net.params();
    ckpt.env = {{"note", "test"}};

    const auto path = std::filesystem::temp_directory_path() / "imarl_unit_ckpt.json";
    save_checkpoint(path, ckpt);
    const auto loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(loaded.weights == ckpt.weights);
    CHECK(loaded.group == env::AgentGroup::MBR);
    CHECK(loaded.hyperparams.to_json() == ckpt.hyperparams.to_json());

    const QmixNet a = ckpt.network(), b = loaded.network();
    Policy pa(a), pb(b);
    for (int k = 0; k < 100; ++k) {
        const auto obs = random_obs(rng);
        CHECK(pa.act(obs) == pb.act(obs));
    }
}

TEST_CASE("malformed checkpoints are rejected") {
    Checkpoint ckpt;
    ckpt.hyperparams.dims.hidden = 2;
    ckpt.weights.assign(QmixNet(ckpt.hyperparams.dims).size(), 0.5);
    auto j = checkpoint_to_json(ckpt);
    auto bad_version = j;
    bad_version["version"] = 99;
    CHECK_THROWS_AS(checkpoint_from_json(bad_version), std::runtime_error);
    auto bad_shape = j;
    bad_shape["blocks"][0]["values"].erase(0);
    CHECK_THROWS_AS(checkpoint_from_json(bad_shape), std::runtime_error);
    CHECK_THROWS_AS(checkpoint_from_json(nlohmann::json::object()), std::runtime_error);
}
