#include <cmath>
#include <stdexcept>

#include "imarl/qmix/network.hpp"

namespace imarl::qmix {

std::size_t Layout::add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), rows, cols, size_});
    size_ += rows * cols;
    return blocks_.size() - 1;
}

QmixNet::QmixNet(NetDims dims) : dims_(dims) {
    if (dims.n_agents < 1 || dims.obs_dim < 1 || dims.hidden < 1 || dims.mixer_embed < 1) {
        throw std::invalid_argument("QmixNet: all dimensions must be positive");
    }
    const auto H = static_cast<std::size_t>(dims.hidden);
    const auto in = static_cast<std::size_t>(dims.agent_input());
    const auto S = static_cast<std::size_t>(dims.state_dim());
    const auto n = static_cast<std::size_t>(dims.n_agents);
    const auto m = static_cast<std::size_t>(dims.mixer_embed);

    auto gru = [&](const std::string& prefix, std::size_t input) {
        GruIds ids{};
        ids.w_input = layout_.add(prefix + ".w_input", 3 * H, input);
        ids.w_hidden = layout_.add(prefix + ".w_hidden", 3 * H, H);
        ids.b_input = layout_.add(prefix + ".b_input", 3 * H);
        ids.b_hidden = layout_.add(prefix + ".b_hidden", 3 * H);
        return ids;
    };
    gru1 = gru("gru1", in);
    gru2 = gru("gru2", H);
    head_w = layout_.add("head.w", kActionCount, H);
    head_b = layout_.add("head.b", kActionCount);

    hyper_w1 = layout_.add("mixer.hyper_w1", n * m, S);
    hyper_w1_b = layout_.add("mixer.hyper_w1_b", n * m);
    hyper_b1 = layout_.add("mixer.hyper_b1", m, S);
    hyper_b1_b = layout_.add("mixer.hyper_b1_b", m);
    hyper_w2 = layout_.add("mixer.hyper_w2", m, S);
    hyper_w2_b = layout_.add("mixer.hyper_w2_b", m);
    value_w1 = layout_.add("mixer.value_w1", m, S);
    value_b1 = layout_.add("mixer.value_b1", m);
    value_w2 = layout_.add("mixer.value_w2", 1, m);
    value_b2 = layout_.add("mixer.value_b2", 1);

    params_.assign(layout_.size(), 0.0);
}

void QmixNet::initialize(std::mt19937_64& rng) {
    const double H = dims_.hidden;
    const double S = dims_.state_dim();
    // Bias blocks share the bound of the weight block they belong to.
    auto bound = [&](const Block& b) {
        if (b.name.starts_with("gru")) return 1.0 / std::sqrt(H);
        if (b.name.starts_with("head")) return 1.0 / std::sqrt(H);
        if (b.name == "mixer.value_w2" || b.name == "mixer.value_b2") return 1.0 / std::sqrt(double(dims_.mixer_embed));
        return 1.0 / std::sqrt(S);
    };
    for (const auto& b : layout_.blocks()) {
        std::uniform_real_distribution<double> u(-bound(b), bound(b));
        for (std::size_t k = 0; k < b.size(); ++k) params_[b.offset + k] = u(rng);
    }
}

ConstMatMap QmixNet::mat(std::size_t block) const {
    const auto& b = layout_.block(block);
    return {params_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}

MatMap QmixNet::mat(std::size_t block) { return mat(layout_, params_, block); }

MatMap QmixNet::mat(const Layout& layout, std::vector<double>& buf, std::size_t block) {
    const auto& b = layout.block(block);
    return {buf.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}

namespace {

Vec sigmoid(const Vec& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

GruStep gru_forward(const QmixNet& net, const QmixNet::GruIds& ids, const Vec& x, const Vec& h) {
    const Eigen::Index H = h.size();
    const Vec gi = net.mat(ids.w_input) * x + net.mat(ids.b_input);
    const Vec gh = net.mat(ids.w_hidden) * h + net.mat(ids.b_hidden);
    GruStep s;
    s.x = x;
    s.h_prev = h;
    s.r = sigmoid(gi.segment(0, H) + gh.segment(0, H));
    s.z = sigmoid(gi.segment(H, H) + gh.segment(H, H));
    s.hn_lin = gh.segment(2 * H, H);
    s.n = (gi.segment(2 * H, H) + s.r.cwiseProduct(s.hn_lin)).array().tanh().matrix();
    s.h = (1.0 - s.z.array()).matrix().cwiseProduct(s.n) + s.z.cwiseProduct(h);
    return s;
}

/// Returns (dx, dh_prev) and accumulates weight gradients.
std::pair<Vec, Vec> gru_backward(const QmixNet& net, const QmixNet::GruIds& ids, const GruStep& s, const Vec& dh,
                                 std::vector<double>& grad) {
    const Eigen::Index H = dh.size();
    const Vec dn = dh.cwiseProduct((1.0 - s.z.array()).matrix());
    const Vec dz = dh.cwiseProduct(s.h_prev - s.n);
    const Vec dn_pre = dn.cwiseProduct((1.0 - s.n.array().square()).matrix());
    const Vec dr = dn_pre.cwiseProduct(s.hn_lin);
    const Vec dz_pre = dz.cwiseProduct(s.z.cwiseProduct((1.0 - s.z.array()).matrix()));
    const Vec dr_pre = dr.cwiseProduct(s.r.cwiseProduct((1.0 - s.r.array()).matrix()));

    Vec g_in(3 * H);
    g_in << dr_pre, dz_pre, dn_pre;
    Vec g_h(3 * H);
    g_h << dr_pre, dz_pre, dn_pre.cwiseProduct(s.r);

    const auto& layout = net.layout();
    QmixNet::mat(layout, grad, ids.w_input) += g_in * s.x.transpose();
    QmixNet::mat(layout, grad, ids.b_input) += g_in;
    QmixNet::mat(layout, grad, ids.w_hidden) += g_h * s.h_prev.transpose();
    QmixNet::mat(layout, grad, ids.b_hidden) += g_h;

    Vec dx = net.mat(ids.w_input).transpose() * g_in;
    Vec dh_prev = net.mat(ids.w_hidden).transpose() * g_h + dh.cwiseProduct(s.z);
    return {std::move(dx), std::move(dh_prev)};
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

Eigen::Vector2d agent_step(const QmixNet& net, const Vec& input, Vec& hidden, AgentStep* cache) {
    const Eigen::Index H = net.dims().hidden;
    if (input.size() != net.dims().agent_input() || hidden.size() != 2 * H) {
        throw std::invalid_argument("agent_step: input or hidden size mismatch");
    }
    GruStep l1 = gru_forward(net, net.gru1, input, hidden.head(H));
    GruStep l2 = gru_forward(net, net.gru2, l1.h, hidden.tail(H));
    const Eigen::Vector2d q = net.mat(net.head_w) * l2.h + net.mat(net.head_b);
    hidden.head(H) = l1.h;
    hidden.tail(H) = l2.h;
    if (cache != nullptr) {
        cache->l1 = std::move(l1);
        cache->l2 = std::move(l2);
        cache->q = q;
    }
    return q;
}

std::vector<AgentStep> agent_unroll(const QmixNet& net, std::span<const Vec> inputs) {
    if (inputs.empty()) throw std::invalid_argument("agent_unroll: empty sequence");
    Vec hidden = Vec::Zero(2 * net.dims().hidden);
    std::vector<AgentStep> steps(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) agent_step(net, inputs[t], hidden, &steps[t]);
    return steps;
}

Eigen::MatrixX2d agent_q(const QmixNet& net, std::span<const Vec> inputs) {
    if (inputs.empty()) throw std::invalid_argument("agent_q: empty sequence");
    Vec hidden = Vec::Zero(2 * net.dims().hidden);
    Eigen::MatrixX2d q(static_cast<Eigen::Index>(inputs.size()), 2);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        q.row(static_cast<Eigen::Index>(t)) = agent_step(net, inputs[t], hidden).transpose();
    }
    return q;
}

void agent_backward(const QmixNet& net, const std::vector<AgentStep>& steps, const Eigen::MatrixX2d& dq,
                    std::vector<double>& grad) {
    if (dq.rows() != static_cast<Eigen::Index>(steps.size())) {
        throw std::invalid_argument("agent_backward: gradient rows must match the sequence length");
    }
    const Eigen::Index H = net.dims().hidden;
    const auto& layout = net.layout();
    Vec carry1 = Vec::Zero(H);
    Vec carry2 = Vec::Zero(H);
    for (std::size_t k = steps.size(); k-- > 0;) {
        const auto& s = steps[k];
        const Eigen::Vector2d g = dq.row(static_cast<Eigen::Index>(k)).transpose();
        QmixNet::mat(layout, grad, net.head_w) += g * s.l2.h.transpose();
        QmixNet::mat(layout, grad, net.head_b) += g;
        const Vec dh2 = net.mat(net.head_w).transpose() * g + carry2;
        auto [dx2, dh2_prev] = gru_backward(net, net.gru2, s.l2, dh2, grad);
        carry2 = std::move(dh2_prev);
        const Vec dh1 = dx2 + carry1;
        auto [dx1, dh1_prev] = gru_backward(net, net.gru1, s.l1, dh1, grad);
        carry1 = std::move(dh1_prev);
    }
}

double mix(const QmixNet& net, const Vec& chosen_qs, const Vec& state, MixCache* cache) {
    const auto& d = net.dims();
    if (chosen_qs.size() != d.n_agents || state.size() != d.state_dim()) {
        throw std::invalid_argument("mix: agent values or state have the wrong size");
    }
    const Eigen::Index n = d.n_agents;
    const Eigen::Index m = d.mixer_embed;

    const Vec w1_pre = net.mat(net.hyper_w1) * state + net.mat(net.hyper_w1_b);
    const Eigen::Map<const RowMat> w1_raw(w1_pre.data(), n, m);
    const RowMat w1 = w1_raw.cwiseAbs();
    const Vec b1 = net.mat(net.hyper_b1) * state + net.mat(net.hyper_b1_b);
    const Vec hid_pre = w1.transpose() * chosen_qs + b1;
    const Vec hid = hid_pre.unaryExpr([](double x) { return elu(x); });
    const Vec w2_pre = net.mat(net.hyper_w2) * state + net.mat(net.hyper_w2_b);
    const Vec v_pre = net.mat(net.value_w1) * state + net.mat(net.value_b1);
    const double b2 = (net.mat(net.value_w2) * v_pre.cwiseMax(0.0))(0) + net.mat(net.value_b2)(0);
    const double q_tot = hid.dot(w2_pre.cwiseAbs()) + b2;

    if (cache != nullptr) {
        cache->state = state;
        cache->qs = chosen_qs;
        cache->w1_pre = w1_pre;
        cache->b1 = b1;
        cache->hid_pre = hid_pre;
        cache->hid = hid;
        cache->w2_pre = w2_pre;
        cache->v_pre = v_pre;
        cache->b2 = b2;
        cache->q_tot = q_tot;
    }
    return q_tot;
}

Vec mix_backward(const QmixNet& net, const MixCache& c, double d_qtot, std::vector<double>& grad) {
    const auto& d = net.dims();
    const Eigen::Index n = d.n_agents;
    const Eigen::Index m = d.mixer_embed;
    const auto& layout = net.layout();

    const Vec w2 = c.w2_pre.cwiseAbs();
    const Vec dw2 = d_qtot * c.hid;
    const Vec dhid_pre =
        (d_qtot * w2).cwiseProduct(c.hid_pre.unaryExpr([](double x) { return elu_grad(x); }));

    const Vec dw2_pre = dw2.cwiseProduct(c.w2_pre.unaryExpr([](double x) { return sign(x); }));
    QmixNet::mat(layout, grad, net.hyper_w2) += dw2_pre * c.state.transpose();
    QmixNet::mat(layout, grad, net.hyper_w2_b) += dw2_pre;

    const Vec relu_v = c.v_pre.cwiseMax(0.0);
    QmixNet::mat(layout, grad, net.value_w2) += d_qtot * relu_v.transpose();
    QmixNet::mat(layout, grad, net.value_b2)(0) += d_qtot;
    Vec dv_pre = d_qtot * net.mat(net.value_w2).transpose();
    for (Eigen::Index j = 0; j < m; ++j) {
        if (c.v_pre(j) <= 0.0) dv_pre(j) = 0.0;
    }
    QmixNet::mat(layout, grad, net.value_w1) += dv_pre * c.state.transpose();
    QmixNet::mat(layout, grad, net.value_b1) += dv_pre;

    QmixNet::mat(layout, grad, net.hyper_b1) += dhid_pre * c.state.transpose();
    QmixNet::mat(layout, grad, net.hyper_b1_b) += dhid_pre;

    const Eigen::Map<const RowMat> w1_raw(c.w1_pre.data(), n, m);
    const RowMat dw1 = c.qs * dhid_pre.transpose();
    RowMat dw1_pre = dw1.cwiseProduct(w1_raw.unaryExpr([](double x) { return sign(x); }));
    const Eigen::Map<const Vec> dw1_flat(dw1_pre.data(), n * m);
    QmixNet::mat(layout, grad, net.hyper_w1) += dw1_flat * c.state.transpose();
    QmixNet::mat(layout, grad, net.hyper_w1_b) += dw1_flat;

    return w1_raw.cwiseAbs() * dhid_pre;
}

Vec agent_input(const NetDims& dims, std::span<const double> features, int last_action_index, int agent_index) {
    if (static_cast<int>(features.size()) != dims.obs_dim) {
        throw std::invalid_argument("agent_input: feature size mismatch");
    }
    if (agent_index < 0 || agent_index >= dims.n_agents || last_action_index < -1 ||
        last_action_index >= kActionCount) {
        throw std::invalid_argument("agent_input: index out of range");
    }
    Vec x = Vec::Zero(dims.agent_input());
    for (int k = 0; k < dims.obs_dim; ++k) x(k) = features[static_cast<std::size_t>(k)];
    if (last_action_index >= 0) x(dims.obs_dim + last_action_index) = 1.0;
    x(dims.obs_dim + kActionCount + agent_index) = 1.0;
    return x;
}

}  // namespace imarl::qmix
