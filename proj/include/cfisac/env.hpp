#pragma once

#include "cfisac/manifold.hpp"
#include "cfisac/td3.hpp"

namespace cfisac {

struct MdpSpec {
    std::size_t num_users = 0;
    std::size_t action_dim = 0;
    std::size_t state_dim = 0;
    std::size_t horizon = 64;
    double gamma = 0.99;

    std::size_t feature_dim() const { return num_users + 2; }
};

/// Action: [Re w_1 .. Re w_K | Im w_1 .. Im w_K | tx positions | rx positions],
/// one beam per user shared by every transmit AP and one position vector per
/// array type shared by every AP of that type. State: [mean rate per user,
/// P_max, D0 | previous action | previous reward].
inline MdpSpec make_mdp_spec(const Scenario& scn, std::size_t horizon = 64, double gamma = 0.99) {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    MdpSpec m;
    m.num_users = scn.K();
    m.action_dim = (2 * scn.K() + 1) * scn.Nt() + scn.Nr();
    m.state_dim = m.feature_dim() + m.action_dim + 1;
    m.horizon = horizon;
    m.gamma = gamma;
    return m;
}

struct StateParts {
    VecX rates;
    double p_max = 0.0;
    double d0 = 0.0;
    VecX prev_action;
    double prev_reward = 0.0;
};

inline VecX encode_state(const MdpSpec& spec, const VecX& mean_rates, double p_max, double d0, const VecX& prev_action,
                         double prev_reward) {
    if (static_cast<std::size_t>(mean_rates.size()) != spec.num_users ||
        static_cast<std::size_t>(prev_action.size()) != spec.action_dim)
        throw DomainError("encode_state: dimension mismatch");
    VecX s(static_cast<Eigen::Index>(spec.state_dim));
    s << mean_rates, p_max, d0, prev_action, prev_reward;
    if (!s.allFinite()) throw DomainError("encode_state: non-finite feature");
    return s;
}

inline StateParts decode_state(const MdpSpec& spec, const VecX& s) {
    if (static_cast<std::size_t>(s.size()) != spec.state_dim) throw DomainError("decode_state: dimension mismatch");
    const auto K = static_cast<Eigen::Index>(spec.num_users);
    const auto n = static_cast<Eigen::Index>(spec.action_dim);
    return {s.head(K), s[K], s[K + 1], s.segment(K + 2, n), s[K + 2 + n]};
}

/// Sorts `x`, then makes neighbour gaps >= d0 inside `box`. The forward
/// (push-up) and backward (push-down) cumulative repairs are averaged, which
/// keeps a cluster centred where it was, and a final forward/backward pass
/// restores exact feasibility. Requires box.width() >= (n - 1) * d0.
inline VecX repair_positions(VecX x, const Interval& box, double d0) {
    const Eigen::Index n = x.size();
    if (n == 0) return x;
    std::sort(x.data(), x.data() + n);
    VecX up = x, down = x;
    up[0] = std::max(up[0], box.lo);
    for (Eigen::Index t = 1; t < n; ++t) up[t] = std::max(up[t], up[t - 1] + d0);
    down[n - 1] = std::min(down[n - 1], box.hi);
    for (Eigen::Index t = n - 1; t-- > 0;) down[t] = std::min(down[t], down[t + 1] - d0);
    VecX y = 0.5 * (up + down);
    y[0] = std::max(y[0], box.lo);
    for (Eigen::Index t = 1; t < n; ++t) y[t] = std::max(y[t], y[t - 1] + d0);
    y[n - 1] = std::min(y[n - 1], box.hi);
    for (Eigen::Index t = n - 1; t-- > 0;) y[t] = std::min(y[t], y[t + 1] - d0);
    return y;
}

struct DecodedAction {
    BeamformingSet beams;
    MaLayout layout;
};

/// Maps an action in [-1, 1]^n (entries outside are clipped) to beams and
/// antenna positions that satisfy the power, box and spacing constraints.
/// Beam coordinates scale by sqrt(P_max / N_t), so the all-ones real part is a
/// full-power beam; beams longer than sqrt(P_max) are shrunk onto the ball.
/// With `fixed_positions` the position coordinates are ignored and the
/// uniform reference layout is used.
inline DecodedAction decode_action(const VecX& action, const Scenario& scn, bool fixed_positions = false) {
    const std::size_t K = scn.K(), Nt = scn.Nt(), Nr = scn.Nr();
    const auto& cfg = scn.config;
    if (static_cast<std::size_t>(action.size()) != (2 * K + 1) * Nt + Nr)
        throw DomainError("decode_action: action dimension mismatch");
    const VecX a = action.cwiseMax(-1.0).cwiseMin(1.0);
    const double amp = std::sqrt(cfg.p_max / static_cast<double>(Nt));

    DecodedAction out{BeamformingSet(scn.A(), K, Nt), {}};
    const auto nt = static_cast<Eigen::Index>(Nt);
    for (std::size_t k = 0; k < K; ++k) {
        const auto re = static_cast<Eigen::Index>(k * Nt), im = static_cast<Eigen::Index>((K + k) * Nt);
        VecXc w(nt);
        for (Eigen::Index t = 0; t < nt; ++t) w[t] = amp * cplx(a[re + t], a[im + t]);
        const double p = w.squaredNorm();
        if (p > cfg.p_max) w *= std::sqrt(cfg.p_max / p);
        for (std::size_t ap = 0; ap < scn.A(); ++ap) out.beams.at(ap, k) = w;
    }

    if (fixed_positions) {
        out.layout = fixed_position_layout(cfg);
        return out;
    }
    auto place = [&](Eigen::Index offset, std::size_t n, const Interval& box) {
        const VecX raw = (box.mid() + 0.5 * box.width() * a.segment(offset, static_cast<Eigen::Index>(n)).array()).matrix();
        return repair_positions(raw, box, cfg.d0_spacing);
    };
    const auto tx_off = static_cast<Eigen::Index>(2 * K * Nt);
    out.layout.tx.assign(scn.A(), place(tx_off, Nt, cfg.ma_range_tx));
    out.layout.rx.assign(scn.B(), place(tx_off + nt, Nr, cfg.ma_range_rx));
    return out;
}

enum class TsMode { full, cached, ideal };

inline const char* ts_mode_name(TsMode m) {
    switch (m) {
        case TsMode::full: return "full";
        case TsMode::ideal: return "ideal";
        default: return "cached";
    }
}

inline TsMode ts_mode_from_name(const std::string& s) {
    if (s == "full") return TsMode::full;
    if (s == "cached") return TsMode::cached;
    if (s == "ideal") return TsMode::ideal;
    throw ConfigError("unknown ts mode '" + s + "' (expected full, cached or ideal)");
}

/// Reward assigned when the Fisher information is singular (no usable echo).
inline constexpr double kRewardFloor = -1e4;

struct RewardBreakdown {
    double crlb = 0.0;             // sum over receivers of tr(CRLB_b)
    std::size_t violations = 0;    // number of violated constraint families
    double value = 0.0;
    bool singular = false;
    TsErrorMatrix ts;              // TS errors the CRLB was evaluated at
};

inline double compose_reward(double crlb, std::size_t violations, double beta) {
    if (!std::isfinite(crlb)) return kRewardFloor;
    return -crlb - beta * static_cast<double>(violations);
}

/// TS errors that stand for "no error": zero, projected into the bounds. The
/// CRLB only depends on differences between TS errors of one receiver, so any
/// constant matrix gives the same value.
inline TsErrorMatrix nominal_ts(const Scenario& scn) {
    return TsErrorMatrix(scn.A(), scn.B(), scn.config.ts_bounds.clamp(0.0));
}

/// Reward of a decoded action with the CRLB taken at the solver's worst-case
/// TS errors (full) or at zero TS error (ideal). A warm start, if given, seeds
/// the worst-case solver.
inline RewardBreakdown reward(const Scenario& scn, const DecodedAction& d, TsMode mode, double beta,
                              const ManifoldSolverConfig& solver = {},
                              const std::optional<TsErrorMatrix>& warm_start = std::nullopt) {
    RewardBreakdown r;
    r.violations = audit_constraints(scn, d.beams, d.layout).num_violated();
    if (mode == TsMode::ideal) {
        r.ts = nominal_ts(scn);
        r.crlb = crlb_total(fim(scn, d.beams, d.layout, phasor_from_ts(r.ts, scn.config.freq_grid)));
    } else {
        const auto wc = worst_case_ts(scn, d.beams, d.layout, solver, warm_start);
        r.ts = wc.ts_star;
        r.crlb = wc.worst_crlb;
    }
    r.singular = !std::isfinite(r.crlb);
    r.value = compose_reward(r.crlb, r.violations, beta);
    return r;
}

struct EnvConfig {
    TsMode ts_mode = TsMode::cached;
    std::size_t horizon = 64;
    double gamma = 0.99;
    double penalty_beta = 10.0;
    bool fixed_positions = false;
    std::size_t cache_refresh = 16;
    std::size_t cache_cg_iters = 20;
    // What the learner sees: -log10(-raw / reward_scale) (log) or
    // raw / reward_scale (linear), clipped to [-reward_clip, reward_clip]. Both
    // are increasing in the raw reward. reward_scale <= 0 selects the ideal-TS
    // CRLB of a full-power broadside beam on the reference layout.
    bool log_reward = true;
    double reward_scale = 0.0;
    double reward_clip = 20.0;
    ManifoldSolverConfig solver{};
};

struct StepResult {
    VecX next_state;
    double reward = 0.0;       // learner-side (scaled) reward
    RewardBreakdown raw;
    bool done = false;         // end of the fixed-horizon episode
    bool terminal = false;     // true end of the process (never for this MDP)
};

/// Fixed-horizon episodes on one scenario. The environment keeps the best
/// action seen so far (by raw training reward).
class IsacEnv {
public:
    IsacEnv(Scenario scenario, EnvConfig config) : scn_(std::move(scenario)), cfg_(std::move(config)) {
        validate(cfg_.solver);
        if (cfg_.cache_refresh < 1) throw ConfigError("cache_refresh must be >= 1");
        if (!(cfg_.reward_clip > 0.0)) throw ConfigError("reward_clip must be > 0");
        spec_ = make_mdp_spec(scn_, cfg_.horizon, cfg_.gamma);
        cached_solver_ = cfg_.solver;
        cached_solver_.max_outer = 1;
        cached_solver_.max_cg_iters = cfg_.cache_cg_iters;
        cached_solver_.refine_starts = 1;
        cached_solver_.refine_sweeps = std::min<std::size_t>(cfg_.solver.refine_sweeps, 2);
        cached_solver_.refine_grid = std::min<std::size_t>(cfg_.solver.refine_grid, 33);
        scale_ = cfg_.reward_scale > 0.0 ? cfg_.reward_scale : reference_scale();
        reset();
    }

    const MdpSpec& spec() const { return spec_; }
    const Scenario& scenario() const { return scn_; }
    const EnvConfig& config() const { return cfg_; }
    double reward_scale() const { return scale_; }
    std::size_t steps_taken() const { return total_steps_; }

    VecX reset() {
        step_ = 0;
        prev_action_ = VecX::Zero(static_cast<Eigen::Index>(spec_.action_dim));
        state_ = encode_state(spec_, VecX::Zero(static_cast<Eigen::Index>(scn_.K())), scn_.config.p_max,
                              scn_.config.d0_spacing, prev_action_, 0.0);
        return state_;
    }

    const VecX& state() const { return state_; }

    double learner_reward(double raw) const {
        const double v = cfg_.log_reward ? -std::log10(std::max(-raw, 1e-300) / scale_) : raw / scale_;
        return std::clamp(v, -cfg_.reward_clip, cfg_.reward_clip);
    }

    StepResult step(const VecX& action) {
        const DecodedAction d = decode_action(action, scn_, cfg_.fixed_positions);
        StepResult out;
        out.raw = training_reward(d);
        out.reward = learner_reward(out.raw.value);
        const auto rates = weighted_sum_rate(scn_, comm_channels(scn_, d.layout), d.beams);
        VecX mean_rates(static_cast<Eigen::Index>(scn_.K()));
        for (std::size_t k = 0; k < scn_.K(); ++k) mean_rates[static_cast<Eigen::Index>(k)] = rates.mean_rate(k);
        prev_action_ = action.cwiseMax(-1.0).cwiseMin(1.0);
        state_ = encode_state(spec_, mean_rates, scn_.config.p_max, scn_.config.d0_spacing, prev_action_, out.reward);
        out.next_state = state_;
        ++step_;
        ++total_steps_;
        out.done = step_ >= spec_.horizon;
        if (!best_ || out.raw.value > best_->second) best_ = {prev_action_, out.raw.value};
        return out;
    }

    /// Reward used to judge a policy: a full worst-case solve, or the zero-TS
    /// CRLB in ideal mode.
    RewardBreakdown evaluate(const VecX& action) const {
        const TsMode mode = cfg_.ts_mode == TsMode::ideal ? TsMode::ideal : TsMode::full;
        return reward(scn_, decode_action(action, scn_, cfg_.fixed_positions), mode, cfg_.penalty_beta, cfg_.solver);
    }

    double evaluation_reward(const VecX& action) const { return evaluate(action).value; }

    const std::optional<std::pair<VecX, double>>& best() const { return best_; }

private:
    RewardBreakdown training_reward(const DecodedAction& d) {
        switch (cfg_.ts_mode) {
            case TsMode::ideal: return reward(scn_, d, TsMode::ideal, cfg_.penalty_beta);
            case TsMode::full: return reward(scn_, d, TsMode::full, cfg_.penalty_beta, cfg_.solver);
            case TsMode::cached: break;
        }
        RewardBreakdown r;
        if (!cache_ || since_refresh_ >= cfg_.cache_refresh) {
            r = reward(scn_, d, TsMode::full, cfg_.penalty_beta, cached_solver_, cache_);
            if (!r.singular) {
                cache_ = r.ts;
                since_refresh_ = 0;
            }
        } else {
            r.violations = audit_constraints(scn_, d.beams, d.layout).num_violated();
            r.ts = *cache_;
            r.crlb = crlb_total(fim(scn_, d.beams, d.layout, phasor_from_ts(r.ts, scn_.config.freq_grid)));
            r.singular = !std::isfinite(r.crlb);
            r.value = compose_reward(r.crlb, r.violations, cfg_.penalty_beta);
        }
        ++since_refresh_;
        return r;
    }

    double reference_scale() const {
        VecX a = VecX::Zero(static_cast<Eigen::Index>(spec_.action_dim));
        a.head(static_cast<Eigen::Index>(scn_.K() * scn_.Nt())).setOnes();
        const auto r = reward(scn_, decode_action(a, scn_, true), TsMode::ideal, 0.0);
        return r.singular || !(r.crlb > 0.0) ? 1.0 : r.crlb;
    }

    Scenario scn_;
    EnvConfig cfg_;
    MdpSpec spec_;
    ManifoldSolverConfig cached_solver_;
    double scale_ = 1.0;
    std::size_t step_ = 0;
    std::size_t total_steps_ = 0;
    std::size_t since_refresh_ = 0;
    std::optional<TsErrorMatrix> cache_;
    VecX prev_action_;
    VecX state_;
    std::optional<std::pair<VecX, double>> best_;
};

/// One-step problem with a constant state and reward -(a - target)^2.
class ToyEnv {
public:
    explicit ToyEnv(double target = 0.5) : target_(target) {
        spec_.num_users = 0;
        spec_.action_dim = 1;
        spec_.state_dim = 1;
        spec_.horizon = 1;
        spec_.gamma = 0.99;
    }

    const MdpSpec& spec() const { return spec_; }
    double target() const { return target_; }
    VecX reset() const { return VecX::Ones(1); }
    const VecX& state() const { return state_; }
    double evaluation_reward(const VecX& a) const { return -(a[0] - target_) * (a[0] - target_); }

    StepResult step(const VecX& a) {
        StepResult out;
        out.next_state = state_;
        out.reward = evaluation_reward(a.cwiseMax(-1.0).cwiseMin(1.0));
        out.raw.value = out.reward;
        out.done = true;
        out.terminal = true;
        return out;
    }

private:
    double target_;
    MdpSpec spec_;
    VecX state_ = VecX::Ones(1);
};

}  // namespace cfisac
