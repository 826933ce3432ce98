// Episode replay, greedy/epsilon-greedy action selection, TD training and checkpoints.

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "imarl/envapi.hpp"
#include "imarl/qmix/network.hpp"

namespace imarl::qmix {

int action_index(env::Action a);
env::Action action_from_index(int index);

/// Greedy action over two Q values; ties go to the +1 action.
int greedy_index(const Eigen::Vector2d& q);

struct Transition {
    std::vector<std::array<double, 4>> features;  ///< per agent, normalized
    std::vector<int> actions;                     ///< action indices taken
    double reward = 0.0;                          ///< global reward after the step
};

struct Episode {
    std::vector<Transition> steps;
    std::vector<std::array<double, 4>> final_features;
    bool terminal = false;  ///< no bootstrap from the final observation
};

/// Fixed-capacity FIFO of whole episodes.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);
    void add(Episode episode);
    std::size_t size() const { return episodes_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Episode& at(std::size_t i) const { return episodes_.at(i); }
    /// Uniform sample with replacement. Throws std::logic_error when empty.
    std::vector<const Episode*> sample(std::size_t batch, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::deque<Episode> episodes_;
};

/// Stateful decentralized policy: one recurrent hidden state per agent.
class Policy {
public:
    explicit Policy(const QmixNet& net);
    void reset();
    /// Chooses one action per agent; epsilon > 0 explores with `rng`.
    std::vector<env::Action> act(const env::JointObservation& obs, double epsilon = 0.0,
                                 std::mt19937_64* rng = nullptr);
    /// Q values computed during the last act() call.
    const std::vector<Eigen::Vector2d>& last_q() const { return last_q_; }

private:
    const QmixNet* net_;
    std::vector<Vec> hidden_;
    std::vector<int> last_action_;
    std::vector<Eigen::Vector2d> last_q_;
};

struct Hyperparams {
    int episodes = 3000;
    double gamma = 0.99;
    double learning_rate = 5e-3;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_anneal_fraction = 0.6;
    int buffer_episodes = 500;
    int batch_episodes = 16;
    int target_update_interval = 100;
    double grad_clip = 10.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    NetDims dims;

    void validate() const;
    nlohmann::json to_json() const;
    static Hyperparams from_json(const nlohmann::json& j);
};

/// Linear anneal from start to end over the first `fraction` of the episodes.
double epsilon_at(const Hyperparams& hp, int episode);

struct Adam {
    std::vector<double> m, v;
    long long t = 0;
};

struct UpdateStats {
    double loss = 0.0;
    double grad_norm = 0.0;
};

/// Mean squared TD error over every transition of the batch and its gradient
/// with respect to the online parameters. Targets use the target network evaluated
/// at the online network's greedy next actions.
double td_loss(const QmixNet& online, const QmixNet& target, std::span<const Episode* const> batch, double gamma,
               std::vector<double>* grad);

/// One optimizer step: loss, gradient, norm clipping, Adam update.
UpdateStats td_train_step(QmixNet& online, const QmixNet& target, Adam& adam, std::span<const Episode* const> batch,
                          const Hyperparams& hp);

struct TrainLogRow {
    int episode = 0;
    double episode_return = 0.0;
    double loss = 0.0;
    double epsilon = 0.0;
};

struct TrainResult {
    QmixNet net;
    std::vector<TrainLogRow> log;
    int updates = 0;
};

/// Trains one agent group. Episodes sample goals from the goal domains; the other
/// group's knobs stay at their initial values. Throws std::runtime_error on a
/// non-finite loss. Zero episodes returns the initial weights.
TrainResult train_group(const env::EnvConfig& env_config, env::AgentGroup group, const Hyperparams& hp,
                        std::uint64_t seed, const std::function<void(const TrainLogRow&)>& on_episode = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    env::AgentGroup group = env::AgentGroup::PRIORITY;
    std::uint64_t seed = 0;
    Hyperparams hyperparams;
    nlohmann::json env;  ///< environment settings the weights were trained under
    std::vector<double> weights;

    QmixNet network() const;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
/// Throws std::runtime_error on version, layout or shape mismatch.
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace imarl::qmix
