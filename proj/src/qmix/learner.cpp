#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "imarl/jsonutil.hpp"
#include "imarl/qmix/learner.hpp"

namespace imarl::qmix {

int action_index(env::Action a) { return a == env::Action::UP ? 1 : 0; }

env::Action action_from_index(int index) {
    if (index != 0 && index != 1) throw std::invalid_argument("action index must be 0 or 1");
    return index == 1 ? env::Action::UP : env::Action::DOWN;
}

int greedy_index(const Eigen::Vector2d& q) { return q(1) >= q(0) ? 1 : 0; }

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Episode episode) {
    if (episode.steps.empty()) throw std::invalid_argument("ReplayBuffer: empty episode");
    if (episodes_.size() == capacity_) episodes_.pop_front();
    episodes_.push_back(std::move(episode));
}

std::vector<const Episode*> ReplayBuffer::sample(std::size_t batch, std::mt19937_64& rng) const {
    if (episodes_.empty()) throw std::logic_error("ReplayBuffer: sample from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
    std::vector<const Episode*> out;
    out.reserve(batch);
    for (std::size_t k = 0; k < batch; ++k) out.push_back(&episodes_[pick(rng)]);
    return out;
}

// ---------------------------------------------------------------------------

Policy::Policy(const QmixNet& net) : net_(&net) { reset(); }

void Policy::reset() {
    const auto n = static_cast<std::size_t>(net_->dims().n_agents);
    hidden_.assign(n, Vec::Zero(2 * net_->dims().hidden));
    last_action_.assign(n, -1);
    last_q_.assign(n, Eigen::Vector2d::Zero());
}

std::vector<env::Action> Policy::act(const env::JointObservation& obs, double epsilon, std::mt19937_64* rng) {
    const auto& d = net_->dims();
    if (obs.size() != static_cast<std::size_t>(d.n_agents)) {
        throw std::invalid_argument("Policy::act: observation count does not match the agent count");
    }
    if (epsilon > 0.0 && rng == nullptr) throw std::invalid_argument("Policy::act: exploration needs an rng");
    std::vector<env::Action> actions;
    actions.reserve(obs.size());
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const Vec x = agent_input(d, obs.features[i], last_action_[i], static_cast<int>(i));
        last_q_[i] = agent_step(*net_, x, hidden_[i]);
        int a = greedy_index(last_q_[i]);
        if (epsilon > 0.0 && coin(*rng) < epsilon) a = coin(*rng) < 0.5 ? 0 : 1;
        last_action_[i] = a;
        actions.push_back(action_from_index(a));
    }
    return actions;
}

// ---------------------------------------------------------------------------

void Hyperparams::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("hyperparams: " + what); };
    if (episodes < 0) fail("episodes must be non-negative");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
    if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
        fail("epsilon bounds must be in [0, 1]");
    }
    if (!(epsilon_anneal_fraction > 0.0 && epsilon_anneal_fraction <= 1.0)) {
        fail("epsilon_anneal_fraction must be in (0, 1]");
    }
    if (buffer_episodes < 1 || batch_episodes < 1 || target_update_interval < 1) {
        fail("buffer, batch and target interval must be positive");
    }
    if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
    if (dims.hidden < 1 || dims.mixer_embed < 1) fail("network widths must be positive");
}

nlohmann::json Hyperparams::to_json() const {
    return {{"episodes", episodes},
            {"gamma", gamma},
            {"learning_rate", learning_rate},
            {"epsilon_start", epsilon_start},
            {"epsilon_end", epsilon_end},
            {"epsilon_anneal_fraction", epsilon_anneal_fraction},
            {"buffer_episodes", buffer_episodes},
            {"batch_episodes", batch_episodes},
            {"target_update_interval", target_update_interval},
            {"grad_clip", grad_clip},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"hidden", dims.hidden},
            {"mixer_embed", dims.mixer_embed}};
}

Hyperparams Hyperparams::from_json(const nlohmann::json& j) {
    constexpr std::string_view where = "hyperparams";
    require_known_keys(j,
                       {"episodes", "gamma", "learning_rate", "epsilon_start", "epsilon_end",
                        "epsilon_anneal_fraction", "buffer_episodes", "batch_episodes", "target_update_interval",
                        "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "hidden", "mixer_embed"},
                       where);
    Hyperparams hp;
    read_optional(j, "episodes", hp.episodes, where);
    read_optional(j, "gamma", hp.gamma, where);
    read_optional(j, "learning_rate", hp.learning_rate, where);
    read_optional(j, "epsilon_start", hp.epsilon_start, where);
    read_optional(j, "epsilon_end", hp.epsilon_end, where);
    read_optional(j, "epsilon_anneal_fraction", hp.epsilon_anneal_fraction, where);
    read_optional(j, "buffer_episodes", hp.buffer_episodes, where);
    read_optional(j, "batch_episodes", hp.batch_episodes, where);
    read_optional(j, "target_update_interval", hp.target_update_interval, where);
    read_optional(j, "grad_clip", hp.grad_clip, where);
    read_optional(j, "adam_beta1", hp.adam_beta1, where);
    read_optional(j, "adam_beta2", hp.adam_beta2, where);
    read_optional(j, "adam_eps", hp.adam_eps, where);
    read_optional(j, "hidden", hp.dims.hidden, where);
    read_optional(j, "mixer_embed", hp.dims.mixer_embed, where);
    hp.validate();
    return hp;
}

double epsilon_at(const Hyperparams& hp, int episode) {
    const double anneal = hp.epsilon_anneal_fraction * hp.episodes;
    const double frac = anneal > 0.0 ? std::min(1.0, episode / anneal) : 1.0;
    return hp.epsilon_start + frac * (hp.epsilon_end - hp.epsilon_start);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Vec>> episode_inputs(const NetDims& d, const Episode& ep) {
    const auto n = static_cast<std::size_t>(d.n_agents);
    std::vector<std::vector<Vec>> inputs(n);
    const std::size_t T = ep.steps.size();
    for (std::size_t i = 0; i < n; ++i) {
        inputs[i].reserve(T + 1);
        for (std::size_t t = 0; t <= T; ++t) {
            const auto& feats = t < T ? ep.steps[t].features[i] : ep.final_features[i];
            const int last = t == 0 ? -1 : ep.steps[t - 1].actions[i];
            inputs[i].push_back(agent_input(d, feats, last, static_cast<int>(i)));
        }
    }
    return inputs;
}

Vec joint_state(const std::vector<std::array<double, 4>>& features) {
    Vec s(static_cast<Eigen::Index>(features.size() * 4));
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (std::size_t k = 0; k < 4; ++k) s(static_cast<Eigen::Index>(i * 4 + k)) = features[i][k];
    }
    return s;
}

}  // namespace

double td_loss(const QmixNet& online, const QmixNet& target, std::span<const Episode* const> batch, double gamma,
               std::vector<double>* grad) {
    const auto& d = online.dims();
    if (!(target.dims() == d)) throw std::invalid_argument("td_loss: online and target shapes differ");
    const auto n = static_cast<std::size_t>(d.n_agents);

    std::size_t total = 0;
    for (const Episode* ep : batch) total += ep->steps.size();
    if (total == 0) throw std::invalid_argument("td_loss: empty batch");
    if (grad != nullptr) grad->assign(online.size(), 0.0);

    double loss = 0.0;
    for (const Episode* ep : batch) {
        const std::size_t T = ep->steps.size();
        const auto inputs = episode_inputs(d, *ep);
        std::vector<std::vector<AgentStep>> unrolled(n);
        std::vector<Eigen::MatrixX2d> q_online(n), q_target(n), dq(n);
        for (std::size_t i = 0; i < n; ++i) {
            unrolled[i] = agent_unroll(online, inputs[i]);
            q_online[i].resize(static_cast<Eigen::Index>(T + 1), 2);
            for (std::size_t t = 0; t <= T; ++t) q_online[i].row(static_cast<Eigen::Index>(t)) = unrolled[i][t].q;
            q_target[i] = agent_q(target, inputs[i]);
            dq[i] = Eigen::MatrixX2d::Zero(static_cast<Eigen::Index>(T + 1), 2);
        }

        Vec chosen(static_cast<Eigen::Index>(n)), next(static_cast<Eigen::Index>(n));
        MixCache cache;
        for (std::size_t t = 0; t < T; ++t) {
            const auto ti = static_cast<Eigen::Index>(t);
            const auto& step = ep->steps[t];
            for (std::size_t i = 0; i < n; ++i) {
                chosen(static_cast<Eigen::Index>(i)) = q_online[i](ti, step.actions[i]);
            }
            const double q_tot = mix(online, chosen, joint_state(step.features), &cache);

            double y = step.reward;
            const bool last = t + 1 == T;
            if (!(last && ep->terminal)) {
                for (std::size_t i = 0; i < n; ++i) {
                    const int a = greedy_index(q_online[i].row(ti + 1).transpose());
                    next(static_cast<Eigen::Index>(i)) = q_target[i](ti + 1, a);
                }
                const auto& next_features = last ? ep->final_features : ep->steps[t + 1].features;
                y += gamma * mix(target, next, joint_state(next_features));
            }

            const double err = q_tot - y;
            loss += err * err;
            if (grad != nullptr) {
                const Vec dqs = mix_backward(online, cache, 2.0 * err / static_cast<double>(total), *grad);
                for (std::size_t i = 0; i < n; ++i) dq[i](ti, step.actions[i]) += dqs(static_cast<Eigen::Index>(i));
            }
        }
        if (grad != nullptr) {
            for (std::size_t i = 0; i < n; ++i) agent_backward(online, unrolled[i], dq[i], *grad);
        }
    }
    return loss / static_cast<double>(total);
}

UpdateStats td_train_step(QmixNet& online, const QmixNet& target, Adam& adam, std::span<const Episode* const> batch,
                          const Hyperparams& hp) {
    std::vector<double> grad;
    UpdateStats stats;
    stats.loss = td_loss(online, target, batch, hp.gamma, &grad);
    if (!std::isfinite(stats.loss)) throw std::runtime_error("non-finite TD loss");

    double sq = 0.0;
    for (double g : grad) sq += g * g;
    stats.grad_norm = std::sqrt(sq);
    if (stats.grad_norm > hp.grad_clip) {
        const double scale = hp.grad_clip / stats.grad_norm;
        for (double& g : grad) g *= scale;
    }

    auto& p = online.params();
    if (adam.m.size() != p.size()) {
        adam.m.assign(p.size(), 0.0);
        adam.v.assign(p.size(), 0.0);
        adam.t = 0;
    }
    ++adam.t;
    const double c1 = 1.0 - std::pow(hp.adam_beta1, static_cast<double>(adam.t));
    const double c2 = 1.0 - std::pow(hp.adam_beta2, static_cast<double>(adam.t));
    for (std::size_t k = 0; k < p.size(); ++k) {
        adam.m[k] = hp.adam_beta1 * adam.m[k] + (1.0 - hp.adam_beta1) * grad[k];
        adam.v[k] = hp.adam_beta2 * adam.v[k] + (1.0 - hp.adam_beta2) * grad[k] * grad[k];
        const double step = hp.learning_rate * (adam.m[k] / c1) / (std::sqrt(adam.v[k] / c2) + hp.adam_eps);
        if (step != 0.0) p[k] -= step;
    }
    return stats;
}

// ---------------------------------------------------------------------------

TrainResult train_group(const env::EnvConfig& env_config, env::AgentGroup group, const Hyperparams& hp,
                        std::uint64_t seed, const std::function<void(const TrainLogRow&)>& on_episode) {
    hp.validate();
    std::seed_seq seq{seed, std::uint64_t{0x51ed2701}};
    std::array<std::uint64_t, 4> streams{};
    seq.generate(streams.begin(), streams.end());
    std::mt19937_64 init_rng(streams[0]), explore_rng(streams[1]), sample_rng(streams[2]);

    env::Environment environment(env_config, streams[3]);
    NetDims dims = hp.dims;
    dims.n_agents = static_cast<int>(env::Environment::agents_per_group());
    TrainResult result{QmixNet(dims), {}, 0};
    QmixNet& online = result.net;
    online.initialize(init_rng);
    QmixNet target = online;

    Adam adam;
    ReplayBuffer buffer(static_cast<std::size_t>(hp.buffer_episodes));
    Policy policy(online);

    for (int e = 0; e < hp.episodes; ++e) {
        const double eps = epsilon_at(hp, e);
        environment.reset();
        env::JointObservation obs = environment.observe(group);
        policy.reset();

        Episode episode;
        double ret = 0.0;
        for (;;) {
            const auto actions = policy.act(obs, eps, &explore_rng);
            auto res = environment.step(actions, group);
            Transition tr{obs.features, {}, res.global};
            for (auto a : actions) tr.actions.push_back(action_index(a));
            episode.steps.push_back(std::move(tr));
            ret += res.global;
            obs = std::move(res.obs);
            if (res.done) break;
        }
        episode.final_features = obs.features;
        buffer.add(std::move(episode));

        TrainLogRow row{e, ret, std::nan(""), eps};
        if (buffer.size() >= static_cast<std::size_t>(hp.batch_episodes)) {
            const auto batch = buffer.sample(static_cast<std::size_t>(hp.batch_episodes), sample_rng);
            row.loss = td_train_step(online, target, adam, batch, hp).loss;
            if (++result.updates % hp.target_update_interval == 0) target.params() = online.params();
        }
        result.log.push_back(row);
        if (on_episode) on_episode(row);
    }
    return result;
}

// ---------------------------------------------------------------------------

QmixNet Checkpoint::network() const {
    NetDims dims = hyperparams.dims;
    dims.n_agents = static_cast<int>(env::Environment::agents_per_group());
    QmixNet net(dims);
    if (weights.size() != net.size()) throw std::runtime_error("checkpoint weights do not match the network layout");
    net.params() = weights;
    return net;
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    const QmixNet net = ckpt.network();
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : net.layout().blocks()) {
        std::vector<double> values(ckpt.weights.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                   ckpt.weights.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()));
        blocks.push_back({{"name", b.name}, {"shape", {b.rows, b.cols}}, {"values", std::move(values)}});
    }
    return {{"format", "imarl-qmix-checkpoint"},
            {"version", kCheckpointVersion},
            {"group", env::to_string(ckpt.group)},
            {"seed", ckpt.seed},
            {"hyperparams", ckpt.hyperparams.to_json()},
            {"env", ckpt.env},
            {"blocks", std::move(blocks)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "imarl-qmix-checkpoint") {
            throw std::runtime_error("not a checkpoint file");
        }
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
        }
        Checkpoint c;
        c.group = env::group_from_string(j.at("group").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.hyperparams = Hyperparams::from_json(j.at("hyperparams"));
        c.env = j.at("env");

        NetDims dims = c.hyperparams.dims;
        dims.n_agents = static_cast<int>(env::Environment::agents_per_group());
        const QmixNet shape(dims);
        const auto& blocks = j.at("blocks");
        if (blocks.size() != shape.layout().blocks().size()) throw std::runtime_error("checkpoint block count mismatch");
        c.weights.assign(shape.size(), 0.0);
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            const auto& want = shape.layout().block(k);
            const auto& got = blocks[k];
            const auto dims_got = got.at("shape").get<std::vector<std::size_t>>();
            if (got.at("name").get<std::string>() != want.name || dims_got.size() != 2 || dims_got[0] != want.rows ||
                dims_got[1] != want.cols) {
                throw std::runtime_error("checkpoint block '" + want.name + "' has the wrong name or shape");
            }
            const auto values = got.at("values").get<std::vector<double>>();
            if (values.size() != want.size()) throw std::runtime_error("checkpoint block '" + want.name + "' size");
            std::copy(values.begin(), values.end(), c.weights.begin() + static_cast<std::ptrdiff_t>(want.offset));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << checkpoint_to_json(ckpt).dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace imarl::qmix
