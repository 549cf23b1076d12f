#pragma once

#include "cfisac/nn.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

namespace cfisac {

struct Transition {
    VecX state;
    VecX action;
    double reward = 0.0;
    VecX next_state;
    bool terminal = false;  // no bootstrapping past this step
};

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
        if (capacity_ == 0) throw ConfigError("replay buffer capacity must be >= 1");
    }

    void push(Transition t) {
        if (!t.state.allFinite() || !t.action.allFinite() || !t.next_state.allFinite() || !std::isfinite(t.reward))
            throw DomainError("replay buffer: non-finite transition");
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return data_.empty(); }

    /// i-th transition in insertion order (0 = oldest still stored).
    const Transition& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

    /// min(n, size()) distinct transitions, in insertion order.
    std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const {
        std::vector<std::size_t> all(data_.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::vector<std::size_t> pick;
        pick.reserve(std::min(n, all.size()));
        std::sample(all.begin(), all.end(), std::back_inserter(pick), n, rng);
        std::vector<Transition> out;
        out.reserve(pick.size());
        for (auto i : pick) out.push_back(at(i));
        return out;
    }

    void clear() {
        data_.clear();
        head_ = 0;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Transition> data_;
};

struct Td3Config {
    double actor_lr = 1e-3;
    double critic1_lr = 1e-3;
    double critic2_lr = 1e-3;
    double gamma = 0.99;
    double critic_tau = 0.005;
    double actor_tau = 0.005;
    std::size_t policy_delay = 2;
    double target_noise_sigma = 0.2;
    double noise_clip = 0.5;
    std::size_t batch_size = 256;
    double exploration_noise = 0.1;
    std::size_t buffer_capacity = 100000;
    std::vector<std::size_t> hidden{256, 256};
};

inline void validate(const Td3Config& c) {
    auto fail = [](const char* what) { throw ConfigError(std::string("invalid td3 config: ") + what); };
    auto in_unit = [](double x) { return x > 0.0 && x < 1.0; };
    if (!in_unit(c.actor_lr) || !in_unit(c.critic1_lr) || !in_unit(c.critic2_lr)) fail("learning rates in (0, 1)");
    if (!(c.gamma > 0.0 && c.gamma <= 1.0)) fail("gamma in (0, 1]");
    if (!(c.critic_tau >= 0.0 && c.critic_tau <= 1.0) || !(c.actor_tau >= 0.0 && c.actor_tau <= 1.0))
        fail("target decays in [0, 1]");
    if (c.policy_delay < 1) fail("policy_delay >= 1");
    if (!(c.target_noise_sigma >= 0.0) || !(c.noise_clip >= 0.0) || !(c.exploration_noise >= 0.0))
        fail("noise scales >= 0");
    if (c.batch_size < 1) fail("batch_size >= 1");
    if (c.buffer_capacity < c.batch_size) fail("buffer_capacity >= batch_size");
    for (auto h : c.hidden)
        if (h == 0) fail("hidden widths >= 1");
}

/// Online and target actor/critic networks with their optimizers.
struct Td3Learner {
    Td3Config cfg;
    std::size_t state_dim = 0;
    std::size_t action_dim = 0;
    nn::Mlp actor, critic1, critic2;
    nn::Mlp actor_target, critic1_target, critic2_target;
    nn::Adam actor_opt, critic1_opt, critic2_opt;
    std::mt19937_64 rng;
    std::uint64_t updates = 0;

    Td3Learner() = default;

    Td3Learner(std::size_t state_dimension, std::size_t action_dimension, const Td3Config& config, std::uint64_t seed)
        : cfg(config), state_dim(state_dimension), action_dim(action_dimension), rng(seed) {
        validate(cfg);
        if (state_dim == 0 || action_dim == 0) throw ConfigError("state and action dimensions must be >= 1");
        std::vector<std::size_t> aw{state_dim}, cw{state_dim + action_dim};
        for (auto h : cfg.hidden) {
            aw.push_back(h);
            cw.push_back(h);
        }
        aw.push_back(action_dim);
        cw.push_back(1);
        actor = nn::Mlp(aw, nn::Activation::relu, nn::Activation::tanh);
        critic1 = nn::Mlp(cw, nn::Activation::relu, nn::Activation::identity);
        critic2 = critic1;
        actor.initialize(rng);
        critic1.initialize(rng);
        critic2.initialize(rng);
        sync_targets();
        reset_optimizers();
    }

    void sync_targets() {
        actor_target = actor;
        critic1_target = critic1;
        critic2_target = critic2;
    }

    void reset_optimizers() {
        actor_opt = nn::Adam(cfg.actor_lr, actor.params().size());
        critic1_opt = nn::Adam(cfg.critic1_lr, critic1.params().size());
        critic2_opt = nn::Adam(cfg.critic2_lr, critic2.params().size());
    }
};

/// Deterministic actor output plus N(0, noise^2) per coordinate, clipped to [-1, 1].
inline VecX select_action(const nn::Mlp& actor, const VecX& state, double noise, std::mt19937_64& rng) {
    if (!state.allFinite()) throw DomainError("select_action: non-finite state");
    VecX a = actor.forward(state);
    if (noise > 0.0) {
        std::normal_distribution<double> n(0.0, noise);
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += n(rng);
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

namespace detail {

inline void soft_update(nn::Mlp& target, const nn::Mlp& online, double tau) {
    if (tau == 1.0)
        target.params() = online.params();
    else if (tau > 0.0)
        target.params() = tau * online.params() + (1.0 - tau) * target.params();
}

struct Batch {
    MatX s, a, r, s2, live;  // one column per transition; r and live are 1 x N
};

inline Batch stack(const std::vector<Transition>& batch) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    Batch b;
    b.s.resize(batch.front().state.size(), n);
    b.a.resize(batch.front().action.size(), n);
    b.s2.resize(batch.front().next_state.size(), n);
    b.r.resize(1, n);
    b.live.resize(1, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = batch[static_cast<std::size_t>(i)];
        b.s.col(i) = t.state;
        b.a.col(i) = t.action;
        b.s2.col(i) = t.next_state;
        b.r(0, i) = t.reward;
        b.live(0, i) = t.terminal ? 0.0 : 1.0;
    }
    return b;
}

inline MatX concat_rows(const MatX& top, const MatX& bottom) {
    MatX x(top.rows() + bottom.rows(), top.cols());
    x << top, bottom;
    return x;
}

}  // namespace detail

/// Gradient of -mean Q1(s, mu(s)) with respect to the actor weights.
inline VecX actor_gradient(const Td3Learner& L, const MatX& states, double& loss) {
    nn::Mlp::Tape actor_tape, critic_tape;
    const MatX mu = L.actor.forward_batch(states, actor_tape);
    const MatX q = L.critic1.forward_batch(detail::concat_rows(states, mu), critic_tape);
    loss = -q.mean();
    MatX dinput;
    L.critic1.backward(critic_tape, MatX::Constant(1, q.cols(), -1.0 / static_cast<double>(q.cols())), &dinput);
    return L.actor.backward(actor_tape, dinput.bottomRows(mu.rows()));
}

/// Gradients of the TD3 losses on one batch, without touching any weights.
/// Critic losses are mean squared errors against the clipped double-Q target;
/// the actor loss is -mean Q1(s, mu(s)).
struct Td3Gradients {
    VecX critic1, critic2, actor;
    double critic_loss_1 = 0.0;
    double critic_loss_2 = 0.0;
    double actor_loss = 0.0;
    MatX target;          // 1 x N regression targets y
    MatX target_actions;  // smoothed target actions
};

inline Td3Gradients td3_gradients(const Td3Learner& L, const std::vector<Transition>& batch, std::mt19937_64& rng,
                                  bool with_actor) {
    const auto b = detail::stack(batch);
    const auto n = static_cast<double>(batch.size());
    Td3Gradients g;

    MatX a2 = L.actor_target.forward_batch(b.s2);
    std::normal_distribution<double> eps(0.0, L.cfg.target_noise_sigma);
    for (Eigen::Index i = 0; i < a2.size(); ++i) {
        const double e = L.cfg.target_noise_sigma > 0.0 ? eps(rng) : 0.0;
        a2.data()[i] = std::clamp(a2.data()[i] + std::clamp(e, -L.cfg.noise_clip, L.cfg.noise_clip), -1.0, 1.0);
    }
    const MatX sa2 = detail::concat_rows(b.s2, a2);
    const MatX q_next = L.critic1_target.forward_batch(sa2).cwiseMin(L.critic2_target.forward_batch(sa2));
    g.target = b.r + L.cfg.gamma * b.live.cwiseProduct(q_next);
    g.target_actions = a2;

    const MatX sa = detail::concat_rows(b.s, b.a);
    auto critic_grad = [&](const nn::Mlp& q, double& loss) {
        nn::Mlp::Tape tape;
        const MatX resid = q.forward_batch(sa, tape) - g.target;
        loss = resid.squaredNorm() / n;
        return q.backward(tape, (2.0 / n) * resid);
    };
    g.critic1 = critic_grad(L.critic1, g.critic_loss_1);
    g.critic2 = critic_grad(L.critic2, g.critic_loss_2);

    if (with_actor) g.actor = actor_gradient(L, b.s, g.actor_loss);
    return g;
}

struct Td3UpdateStats {
    bool performed = false;
    double critic_loss_1 = 0.0;
    double critic_loss_2 = 0.0;
    std::optional<double> actor_loss;
};

/// One TD3 step: both critics regress to the shared target; every
/// policy_delay-th call also moves the actor (against the freshly updated
/// first critic) and all three target networks.
/// An empty batch leaves the learner untouched and reports performed = false.
inline Td3UpdateStats td3_update(Td3Learner& L, const std::vector<Transition>& batch) {
    Td3UpdateStats st;
    if (batch.empty()) return st;
    ++L.updates;
    const bool delayed = L.updates % L.cfg.policy_delay == 0;
    const Td3Gradients g = td3_gradients(L, batch, L.rng, false);
    L.critic1_opt.step(L.critic1.params(), g.critic1);
    L.critic2_opt.step(L.critic2.params(), g.critic2);
    st.performed = true;
    st.critic_loss_1 = g.critic_loss_1;
    st.critic_loss_2 = g.critic_loss_2;
    if (delayed) {
        double loss = 0.0;
        const VecX grad = actor_gradient(L, detail::stack(batch).s, loss);
        L.actor_opt.step(L.actor.params(), grad);
        st.actor_loss = loss;
        detail::soft_update(L.critic1_target, L.critic1, L.cfg.critic_tau);
        detail::soft_update(L.critic2_target, L.critic2, L.cfg.critic_tau);
        detail::soft_update(L.actor_target, L.actor, L.cfg.actor_tau);
    }
    return st;
}

}  // namespace cfisac
