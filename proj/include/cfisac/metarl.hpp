#pragma once

#include "cfisac/env.hpp"

#include <array>
#include <functional>
#include <ostream>

namespace cfisac {

/// One row of the training log.
struct TrainLogRow {
    std::size_t episode = 0;
    std::size_t step = 0;
    double reward = 0.0;
    double critic_loss_1 = 0.0;
    double critic_loss_2 = 0.0;
    std::optional<double> actor_loss;
    double worst_crlb = 0.0;
    std::size_t rate_violations = 0;
};

inline void write_train_log_csv(std::ostream& os, const std::vector<TrainLogRow>& rows) {
    const auto old = os.precision(17);
    os << "episode,step,reward,critic_loss_1,critic_loss_2,actor_loss,worst_crlb,rate_violations\n";
    for (const auto& r : rows) {
        os << r.episode << ',' << r.step << ',' << r.reward << ',' << r.critic_loss_1 << ',' << r.critic_loss_2 << ',';
        if (r.actor_loss) os << *r.actor_loss;
        os << ',' << r.worst_crlb << ',' << r.rate_violations << '\n';
    }
    os.precision(old);
}

/// Where an agent is inside its environment's episode.
struct RolloutCursor {
    VecX state;
    std::size_t episode = 0;
    std::size_t step = 0;
    bool fresh = true;
};

/// Takes one exploring step and stores the transition.
template <class Env>
StepResult collect_step(Env& env, const Td3Learner& learner, ReplayBuffer& buffer, RolloutCursor& cur,
                        std::mt19937_64& rng) {
    if (cur.fresh) {
        cur.state = env.reset();
        cur.fresh = false;
    }
    const VecX a = select_action(learner.actor, cur.state, learner.cfg.exploration_noise, rng);
    StepResult r = env.step(a);
    buffer.push({cur.state, a, r.reward, r.next_state, r.terminal});
    cur.state = r.next_state;
    ++cur.step;
    if (r.done) {
        ++cur.episode;
        cur.fresh = true;
    }
    return r;
}

/// Interleaves environment steps and TD3 updates until `updates` updates have
/// run. Updates start once the buffer holds a full batch. Returns the number
/// of environment steps taken.
template <class Env>
std::size_t run_td3(Td3Learner& learner, Env& env, ReplayBuffer& buffer, std::size_t updates, std::mt19937_64& rng,
                    std::vector<TrainLogRow>* log = nullptr, RolloutCursor* cursor = nullptr) {
    RolloutCursor local;
    RolloutCursor& cur = cursor ? *cursor : local;
    std::size_t done = 0, steps = 0;
    while (done < updates) {
        const std::size_t episode = cur.episode;
        const StepResult r = collect_step(env, learner, buffer, cur, rng);
        ++steps;
        TrainLogRow row{episode, cur.step, r.reward, 0.0, 0.0, std::nullopt, r.raw.crlb, r.raw.violations};
        if (buffer.size() >= learner.cfg.batch_size) {
            const auto st = td3_update(learner, buffer.sample(learner.cfg.batch_size, rng));
            row.critic_loss_1 = st.critic_loss_1;
            row.critic_loss_2 = st.critic_loss_2;
            row.actor_loss = st.actor_loss;
            ++done;
        }
        if (log) log->push_back(row);
    }
    return steps;
}

/// Mean evaluation reward of the noiseless policy over `steps` steps of one
/// episode, run on a copy of the environment.
template <class Env>
double evaluate_policy(const nn::Mlp& actor, const Env& env, std::size_t steps) {
    if (steps == 0) throw ConfigError("evaluate_policy needs at least one step");
    Env probe = env;
    VecX s = probe.reset();
    double total = 0.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const VecX a = actor.forward(s).cwiseMax(-1.0).cwiseMin(1.0);
        total += probe.evaluation_reward(a);
        s = probe.step(a).next_state;
    }
    return total / static_cast<double>(steps);
}

struct MetaConfig {
    std::size_t num_tasks = 2;       // L
    std::size_t inner_steps = 20;    // TD3 updates per task per outer iteration
    std::size_t outer_iters = 200;   // N
    std::size_t adaptation_steps = 500;
    std::size_t collect_steps = 16;  // environment steps per task per outer iteration
    double val_fraction = 0.2;
    double meta_lr = 1e-3;
    // Adaptation learning rates for the two critics and the actor.
    double gamma1 = 1e-3;
    double gamma2 = 1e-3;
    double gamma3 = 1e-3;
    std::uint64_t seed = 1;
    // Seeds of the per-task random streams; empty means 1, 2, ..., L.
    std::vector<std::uint64_t> task_seeds;
};

inline void validate(const MetaConfig& c) {
    auto fail = [](const char* what) { throw ConfigError(std::string("invalid meta config: ") + what); };
    if (c.num_tasks < 1) fail("num_tasks >= 1");
    if (c.outer_iters < 1) fail("outer_iters >= 1");
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) fail("val_fraction in (0, 1)");
    if (!(c.meta_lr > 0.0) || !(c.gamma1 > 0.0) || !(c.gamma2 > 0.0) || !(c.gamma3 > 0.0)) fail("learning rates > 0");
    if (!c.task_seeds.empty() && c.task_seeds.size() != c.num_tasks) fail("task_seeds must list one seed per task");
}

/// Task construction failed; `task` is the failing index.
class TaskError : public std::runtime_error {
public:
    TaskError(std::size_t task, const std::string& what)
        : std::runtime_error("task " + std::to_string(task) + ": " + what), task_(task) {}
    std::size_t task() const { return task_; }

private:
    std::size_t task_;
};

struct MetaLogRow {
    std::size_t outer = 0;
    double val_critic_loss = 0.0;  // mean over tasks of the two critics' validation losses
    double val_actor_loss = 0.0;
    double mean_reward = 0.0;      // mean learner reward of the steps collected this iteration
};

struct MetaResult {
    Td3Learner meta;
    std::vector<Td3Learner> adapted;  // per task, from the last outer iteration
    std::vector<MetaLogRow> log;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline bool in_validation(std::size_t i, double fraction) {
    return std::floor(static_cast<double>(i + 1) * fraction) > std::floor(static_cast<double>(i) * fraction);
}

inline std::vector<Transition> draw(const ReplayBuffer& buf, const std::vector<std::size_t>& pool, std::size_t n,
                                    std::mt19937_64& rng) {
    std::vector<std::size_t> pick;
    std::sample(pool.begin(), pool.end(), std::back_inserter(pick), n, rng);
    std::vector<Transition> out;
    out.reserve(pick.size());
    for (auto i : pick) out.push_back(buf.at(i));
    return out;
}

}  // namespace detail

/// First-order MAML over L tasks. Each outer iteration clones the meta
/// networks per task, collects fresh experience into that task's buffer, runs
/// inner TD3 updates on the training split and takes the gradients of the TD3
/// losses on the validation split at the adapted weights. Their task average
/// drives one Adam step on the meta weights.
template <class Env>
MetaResult meta_train(const std::function<Env(std::size_t)>& sample_task, const MetaConfig& mc, const Td3Config& tc) {
    validate(mc);
    validate(tc);
    std::vector<Env> envs;
    envs.reserve(mc.num_tasks);
    for (std::size_t l = 0; l < mc.num_tasks; ++l) {
        try {
            envs.push_back(sample_task(l));
        } catch (const std::exception& e) {
            throw TaskError(l, e.what());
        }
    }
    const auto& spec = envs.front().spec();
    for (std::size_t l = 1; l < envs.size(); ++l)
        if (envs[l].spec().state_dim != spec.state_dim || envs[l].spec().action_dim != spec.action_dim)
            throw TaskError(l, "state or action dimension differs from task 0");

    MetaResult res;
    res.meta = Td3Learner(spec.state_dim, spec.action_dim, tc, mc.seed);
    nn::Adam opt_actor(mc.meta_lr, res.meta.actor.params().size());
    nn::Adam opt_c1(mc.meta_lr, res.meta.critic1.params().size());
    nn::Adam opt_c2(mc.meta_lr, res.meta.critic2.params().size());

    std::vector<ReplayBuffer> buffers(mc.num_tasks, ReplayBuffer(tc.buffer_capacity));
    std::vector<RolloutCursor> cursors(mc.num_tasks);
    res.adapted.assign(mc.num_tasks, res.meta);

    for (std::size_t n = 0; n < mc.outer_iters; ++n) {
        VecX g_actor = VecX::Zero(res.meta.actor.params().size());
        VecX g_c1 = VecX::Zero(res.meta.critic1.params().size());
        VecX g_c2 = VecX::Zero(res.meta.critic2.params().size());
        MetaLogRow row{n, 0.0, 0.0, 0.0};
        for (std::size_t l = 0; l < mc.num_tasks; ++l) {
            const std::uint64_t task_seed = mc.task_seeds.empty() ? l + 1 : mc.task_seeds[l];
            Td3Learner clone = res.meta;
            clone.sync_targets();
            clone.reset_optimizers();
            clone.updates = 0;
            clone.rng.seed(detail::mix_seed(detail::mix_seed(mc.seed, task_seed), n));
            std::mt19937_64& rng = clone.rng;

            double collected = 0.0;
            for (std::size_t i = 0; i < mc.collect_steps; ++i)
                collected += collect_step(envs[l], clone, buffers[l], cursors[l], rng).reward;
            if (mc.collect_steps > 0) row.mean_reward += collected / static_cast<double>(mc.collect_steps * mc.num_tasks);

            std::vector<std::size_t> trn, val;
            for (std::size_t i = 0; i < buffers[l].size(); ++i)
                (detail::in_validation(i, mc.val_fraction) ? val : trn).push_back(i);
            if (!trn.empty())
                for (std::size_t k = 0; k < mc.inner_steps; ++k)
                    td3_update(clone, detail::draw(buffers[l], trn, tc.batch_size, rng));
            if (!val.empty()) {
                const auto g = td3_gradients(clone, detail::draw(buffers[l], val, tc.batch_size, rng), rng, true);
                const double w = 1.0 / static_cast<double>(mc.num_tasks);
                g_actor += w * g.actor;
                g_c1 += w * g.critic1;
                g_c2 += w * g.critic2;
                row.val_critic_loss += w * 0.5 * (g.critic_loss_1 + g.critic_loss_2);
                row.val_actor_loss += w * g.actor_loss;
            }
            res.adapted[l] = std::move(clone);
        }
        opt_actor.step(res.meta.actor.params(), g_actor);
        opt_c1.step(res.meta.critic1.params(), g_c1);
        opt_c2.step(res.meta.critic2.params(), g_c2);
        res.log.push_back(row);
    }
    res.meta.sync_targets();
    return res;
}

struct AdaptResult {
    Td3Learner policy;
    std::size_t env_steps = 0;
    std::vector<TrainLogRow> log;
};

/// Copies `init`, switches to the adaptation learning rates and runs
/// `steps` TD3 updates on experience collected in `env`.
template <class Env>
AdaptResult adapt(const Td3Learner& init, Env& env, std::size_t steps, const MetaConfig& mc, std::uint64_t seed) {
    AdaptResult out{init, 0, {}};
    Td3Learner& L = out.policy;
    L.cfg.critic1_lr = mc.gamma1;
    L.cfg.critic2_lr = mc.gamma2;
    L.cfg.actor_lr = mc.gamma3;
    L.sync_targets();
    L.reset_optimizers();
    L.updates = 0;
    L.rng.seed(seed);
    ReplayBuffer buffer(L.cfg.buffer_capacity);
    std::mt19937_64 rng(detail::mix_seed(seed, 0x5eed));
    out.env_steps = run_td3(L, env, buffer, steps, rng, &out.log);
    return out;
}

template <class Env>
AdaptResult meta_adapt(const MetaResult& meta, Env& env, const MetaConfig& mc, std::uint64_t seed) {
    return adapt(meta.meta, env, mc.adaptation_steps, mc, seed);
}

}  // namespace cfisac
