// Recurrent agent network and monotonic mixing network with analytic gradients.
//
// All learnable weights live in one flat vector so the optimizer, gradient clipping,
// checkpointing and finite-difference checks can treat them uniformly. Named blocks
// give shape metadata and typed views.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace imarl::qmix {

using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

inline constexpr int kActionCount = 2;  ///< index 0 is the -1 action, index 1 the +1 action

struct Block {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 1;
    std::size_t offset = 0;

    std::size_t size() const { return rows * cols; }
};

/// Offsets of every named weight block inside the flat parameter vector.
class Layout {
public:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols = 1);
    const Block& block(std::size_t id) const { return blocks_[id]; }
    const std::vector<Block>& blocks() const { return blocks_; }
    std::size_t size() const { return size_; }

private:
    std::vector<Block> blocks_;
    std::size_t size_ = 0;
};

struct NetDims {
    int n_agents = 3;
    int obs_dim = 4;      ///< normalized local observation
    int hidden = 2;       ///< recurrent width per layer; the shipped scenarios use 16
    int mixer_embed = 8;  ///< mixing hidden width

    int agent_input() const { return obs_dim + kActionCount + n_agents; }
    int state_dim() const { return obs_dim * n_agents; }
    bool operator==(const NetDims&) const = default;
};

/// Agent network: two stacked gated recurrent layers and a linear two-action head.
/// Mixer: hypernetworks producing non-negative weights from the joint state.
class QmixNet {
public:
    explicit QmixNet(NetDims dims);

    const NetDims& dims() const { return dims_; }
    const Layout& layout() const { return layout_; }
    std::size_t size() const { return layout_.size(); }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per block.
    void initialize(std::mt19937_64& rng);

    ConstMatMap mat(std::size_t block) const;
    MatMap mat(std::size_t block);
    static MatMap mat(const Layout& layout, std::vector<double>& buf, std::size_t block);

    // Block ids.
    struct GruIds {
        std::size_t w_input, w_hidden, b_input, b_hidden;
    };
    GruIds gru1, gru2;
    std::size_t head_w, head_b;
    std::size_t hyper_w1, hyper_w1_b, hyper_b1, hyper_b1_b, hyper_w2, hyper_w2_b;
    std::size_t value_w1, value_b1, value_w2, value_b2;

private:
    NetDims dims_;
    Layout layout_;
    std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Recurrent cells

struct GruStep {
    Vec x, h_prev, r, z, n, hn_lin, h;
};

struct AgentStep {
    GruStep l1, l2;
    Eigen::Vector2d q;
};

/// One forward step of the agent net; `hidden` holds both layers' states (2 * width).
Eigen::Vector2d agent_step(const QmixNet& net, const Vec& input, Vec& hidden, AgentStep* cache = nullptr);

/// Unrolls the agent net over an input sequence from a zero hidden state.
/// Throws std::invalid_argument on an empty sequence.
std::vector<AgentStep> agent_unroll(const QmixNet& net, std::span<const Vec> inputs);

/// Q values of an unrolled sequence, one row per step, columns (-1, +1).
Eigen::MatrixX2d agent_q(const QmixNet& net, std::span<const Vec> inputs);

/// Backpropagates dLoss/dQ (one row per step) through an unrolled sequence,
/// accumulating into `grad` (same layout as the parameters).
void agent_backward(const QmixNet& net, const std::vector<AgentStep>& steps, const Eigen::MatrixX2d& dq,
                    std::vector<double>& grad);

// ---------------------------------------------------------------------------
// Mixer

struct MixCache {
    Vec state, qs;
    Vec w1_pre, b1, hid_pre, hid, w2_pre, v_pre;
    double b2 = 0.0;
    double q_tot = 0.0;
};

/// Q_tot of the chosen per-agent values at a joint state.
/// Throws std::invalid_argument on dimension mismatch.
double mix(const QmixNet& net, const Vec& chosen_qs, const Vec& state, MixCache* cache = nullptr);

/// Accumulates dQ_tot-weighted gradients into `grad`; returns dQ_tot/dQ_i scaled by d_qtot.
Vec mix_backward(const QmixNet& net, const MixCache& cache, double d_qtot, std::vector<double>& grad);

/// Builds the agent-net input: normalized observation, one-hot last action, one-hot agent id.
Vec agent_input(const NetDims& dims, std::span<const double> features, int last_action_index, int agent_index);

}  // namespace imarl::qmix
