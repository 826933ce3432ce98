#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace imarl::testing {

using qmix::Vec;

std::vector<double> water_level_allocation(double capacity, std::span<const netemu::AirlinkDemand> ues) {
    auto at_level = [&](double level) {
        std::vector<double> a(ues.size());
        for (std::size_t i = 0; i < ues.size(); ++i) a[i] = std::min(ues[i].demand, ues[i].weight * level);
        return a;
    };
    auto total = [&](double level) {
        double s = 0.0;
        for (double v : at_level(level)) s += v;
        return s;
    };
    double demand_sum = 0.0;
    double hi = 0.0;
    for (const auto& u : ues) {
        demand_sum += u.demand;
        hi = std::max(hi, u.demand / u.weight);
    }
    if (demand_sum <= capacity) return at_level(hi);
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (total(mid) < capacity ? lo : hi) = mid;
    }
    return at_level(0.5 * (lo + hi));
}

AirlinkInstance random_airlink_instance(std::mt19937_64& rng, int max_ues) {
    std::uniform_int_distribution<int> count(1, max_ues);
    std::uniform_real_distribution<double> demand(0.0, 5.0), cap(0.1, 20.0);
    std::uniform_int_distribution<int> prio(netemu::kMinPriority, netemu::kMaxPriority);
    std::bernoulli_distribution idle(0.1);
    AirlinkInstance inst;
    inst.capacity = cap(rng);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        inst.ues.push_back({idle(rng) ? 0.0 : demand(rng), netemu::priority_weight(prio(rng))});
    }
    return inst;
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

qmix::QmixNet random_net(std::mt19937_64& rng, int hidden, int mixer_embed) {
    qmix::NetDims dims;
    dims.hidden = hidden;
    dims.mixer_embed = mixer_embed;
    qmix::QmixNet net(dims);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& p : net.params()) p = u(rng);
    return net;
}

std::vector<Vec> random_inputs(const qmix::NetDims& dims, int steps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> action(0, 1), agent(0, dims.n_agents - 1);
    const int who = agent(rng);
    std::vector<Vec> inputs;
    for (int t = 0; t < steps; ++t) {
        std::array<double, 4> f{u(rng), u(rng), u(rng), u(rng)};
        inputs.push_back(qmix::agent_input(dims, f, t == 0 ? -1 : action(rng), who));
    }
    return inputs;
}

Vec random_state(const qmix::NetDims& dims, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec s(dims.state_dim());
    for (auto& v : s) v = u(rng);
    return s;
}

namespace {

constexpr double kStep = 1e-5;

bool is_agent_block(const qmix::Block& b) { return b.name.rfind("mixer.", 0) != 0; }

}  // namespace

double agent_gradient_error(const qmix::QmixNet& net, std::span<const Vec> inputs, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Eigen::MatrixX2d coef(static_cast<Eigen::Index>(inputs.size()), 2);
    for (Eigen::Index t = 0; t < coef.rows(); ++t) coef.row(t) << n01(rng), n01(rng);

    auto loss = [&](const qmix::QmixNet& m) { return (qmix::agent_q(m, inputs).array() * coef.array()).sum(); };

    std::vector<double> grad(net.size(), 0.0);
    qmix::agent_backward(net, qmix::agent_unroll(net, inputs), coef, grad);

    double worst = 0.0;
    qmix::QmixNet probe = net;
    for (const auto& b : net.layout().blocks()) {
        if (!is_agent_block(b)) continue;
        for (std::size_t k = b.offset; k < b.offset + b.size(); ++k) {
            const double orig = probe.params()[k];
            probe.params()[k] = orig + kStep;
            const double up = loss(probe);
            probe.params()[k] = orig - kStep;
            const double down = loss(probe);
            probe.params()[k] = orig;
            worst = std::max(worst, relative_error(grad[k], (up - down) / (2 * kStep)));
        }
    }
    return worst;
}

double mixer_gradient_error(const qmix::QmixNet& net, const Vec& qs, const Vec& state) {
    qmix::MixCache cache;
    qmix::mix(net, qs, state, &cache);
    std::vector<double> grad(net.size(), 0.0);
    const Vec dq = qmix::mix_backward(net, cache, 1.0, grad);

    double worst = 0.0;
    qmix::QmixNet probe = net;
    for (const auto& b : net.layout().blocks()) {
        if (is_agent_block(b)) continue;
        for (std::size_t k = b.offset; k < b.offset + b.size(); ++k) {
            const double orig = probe.params()[k];
            probe.params()[k] = orig + kStep;
            const double up = qmix::mix(probe, qs, state);
            probe.params()[k] = orig - kStep;
            const double down = qmix::mix(probe, qs, state);
            probe.params()[k] = orig;
            worst = std::max(worst, relative_error(grad[k], (up - down) / (2 * kStep)));
        }
    }
    for (Eigen::Index i = 0; i < qs.size(); ++i) {
        Vec q = qs;
        q[i] += kStep;
        const double up = qmix::mix(net, q, state);
        q[i] -= 2 * kStep;
        const double down = qmix::mix(net, q, state);
        worst = std::max(worst, relative_error(dq[i], (up - down) / (2 * kStep)));
    }
    return worst;
}

double td_gradient_error(const qmix::QmixNet& online, const qmix::QmixNet& target,
                         std::span<const qmix::Episode* const> batch, double gamma) {
    std::vector<double> grad;
    qmix::td_loss(online, target, batch, gamma, &grad);
    double worst = 0.0;
    qmix::QmixNet probe = online;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        const double orig = probe.params()[k];
        probe.params()[k] = orig + kStep;
        const double up = qmix::td_loss(probe, target, batch, gamma, nullptr);
        probe.params()[k] = orig - kStep;
        const double down = qmix::td_loss(probe, target, batch, gamma, nullptr);
        probe.params()[k] = orig;
        worst = std::max(worst, relative_error(grad[k], (up - down) / (2 * kStep)));
    }
    return worst;
}

qmix::Episode random_episode(const qmix::NetDims& dims, int steps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> action(0, 1);
    auto features = [&] {
        std::vector<std::array<double, 4>> f(static_cast<std::size_t>(dims.n_agents));
        for (auto& a : f) a = {u(rng), u(rng), u(rng), u(rng)};
        return f;
    };
    qmix::Episode ep;
    for (int t = 0; t < steps; ++t) {
        qmix::Transition tr;
        tr.features = features();
        for (int i = 0; i < dims.n_agents; ++i) tr.actions.push_back(action(rng));
        tr.reward = 3.0 * u(rng);
        ep.steps.push_back(std::move(tr));
    }
    ep.final_features = features();
    return ep;
}

}  // namespace imarl::testing
