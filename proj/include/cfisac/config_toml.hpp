#pragma once

#include "cfisac/harness.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <set>

namespace cfisac {

namespace detail {

// Reads typed values out of one TOML table and remembers which keys were
// consumed, so leftovers can be reported as unknown.
class TableReader {
public:
    TableReader(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

    template <class T>
    void get(const char* key, T& out) {
        const toml::node* n = find(key);
        if (!n) return;
        if constexpr (std::is_same_v<T, bool>) {
            out = expect<bool>(n, key, "a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            out = expect<std::string>(n, key, "a string");
        } else if constexpr (std::is_integral_v<T>) {
            const auto v = expect<std::int64_t>(n, key, "an integer");
            if (v < 0) fail(key, "must be >= 0");
            out = static_cast<T>(v);
        } else {
            out = number(n, key);
        }
    }

    void get(const char* key, Interval& out) {
        const toml::node* n = find(key);
        if (!n) return;
        const auto v = numbers(n, key);
        if (v.size() != 2) fail(key, "must be a two-element array [lo, hi]");
        out = {v[0], v[1]};
    }

    void get(const char* key, std::vector<double>& out) {
        if (const toml::node* n = find(key)) out = numbers(n, key);
    }

    template <class T>
        requires std::is_integral_v<T>
    void get(const char* key, std::vector<T>& out) {
        const toml::node* n = find(key);
        if (!n) return;
        const auto* arr = n->as_array();
        if (!arr) fail(key, "must be an array of integers");
        out.clear();
        for (const auto& e : *arr) {
            const auto* i = e.as_integer();
            if (!i || i->get() < 0) fail(key, "must hold non-negative integers");
            out.push_back(static_cast<T>(i->get()));
        }
    }

    bool has(const char* key) const { return t_ && t_->contains(key); }

    void finish() const {
        if (!t_) return;
        for (const auto& [k, v] : *t_)
            if (!used_.count(std::string(k.str())))
                throw ConfigError("unknown key '" + std::string(k.str()) + "' in [" + name_ + "]");
    }

private:
    const toml::node* find(const char* key) {
        if (!t_) return nullptr;
        const toml::node* n = t_->get(key);
        if (n) used_.insert(key);
        return n;
    }

    [[noreturn]] void fail(const char* key, const std::string& what) const {
        throw ConfigError("[" + name_ + "] " + key + " " + what);
    }

    template <class T>
    T expect(const toml::node* n, const char* key, const char* kind) const {
        if (auto v = n->value_exact<T>()) return *v;
        fail(key, std::string("must be ") + kind);
    }

    double number(const toml::node* n, const char* key) const {
        if (auto v = n->value<double>()) return *v;
        fail(key, "must be a number");
    }

    std::vector<double> numbers(const toml::node* n, const char* key) const {
        std::vector<double> out;
        if (const auto* arr = n->as_array()) {
            for (const auto& e : *arr) out.push_back(number(&e, key));
        } else {
            out.push_back(number(n, key));
        }
        return out;
    }

    const toml::table* t_;
    std::string name_;
    std::set<std::string> used_;
};

inline void read_scenario(TableReader& r, ScenarioConfig& c) {
    r.get("num_tx_aps", c.num_tx_aps);
    r.get("num_rx_aps", c.num_rx_aps);
    r.get("num_users", c.num_users);
    r.get("num_tx_mas", c.num_tx_mas);
    r.get("num_rx_mas", c.num_rx_mas);
    r.get("num_freq_samples", c.num_freq_samples);
    double carrier = 3.5e9, bandwidth = 100e6;
    r.get("carrier_hz", carrier);
    r.get("bandwidth_hz", bandwidth);
    if (r.has("freq_grid") && (r.has("carrier_hz") || r.has("bandwidth_hz")))
        throw ConfigError("[scenario] give either freq_grid or carrier_hz/bandwidth_hz, not both");
    c.freq_grid = uniform_frequency_grid(c.num_freq_samples, carrier, bandwidth);
    r.get("freq_grid", c.freq_grid);
    r.get("ring_radius", c.ring_radius);
    r.get("pl0_db", c.pl0_db);
    r.get("exp_user", c.exp_user);
    r.get("exp_target", c.exp_target);
    r.get("num_paths", c.num_paths);
    r.get("noise_power_dbm", c.noise_power_dbm);
    r.get("rcs", c.rcs);
    r.get("d0_spacing", c.d0_spacing);
    r.get("ma_range_tx", c.ma_range_tx);
    r.get("ma_range_rx", c.ma_range_rx);
    if (r.has("p_max") && r.has("p_max_dbm")) throw ConfigError("[scenario] give either p_max or p_max_dbm, not both");
    r.get("p_max", c.p_max);
    if (r.has("p_max_dbm")) {
        double dbm = 0.0;
        r.get("p_max_dbm", dbm);
        c.p_max = dbm_to_watt(dbm);
    }
    r.get("rate_floor", c.rate_floor);
    r.get("rate_weights", c.rate_weights);
    if (r.has("ts_bounds") && r.has("ts_bounds_ns"))
        throw ConfigError("[scenario] give either ts_bounds or ts_bounds_ns, not both");
    r.get("ts_bounds", c.ts_bounds);
    if (r.has("ts_bounds_ns")) {
        Interval ns;
        r.get("ts_bounds_ns", ns);
        c.ts_bounds = {ns.lo * 1e-9, ns.hi * 1e-9};
    }
    r.get("seed", c.seed);
    r.get("sensing_accuracy", c.sensing_accuracy);
    std::vector<double> target;
    r.get("target", target);
    if (!target.empty()) {
        if (target.size() != 2) throw ConfigError("[scenario] target must be [x, y]");
        c.target = {target[0], target[1]};
    }
    r.get("stacked_noise_exponent", c.stacked_noise_exponent);
}

inline void read_solver(TableReader& r, ManifoldSolverConfig& c) {
    r.get("max_outer", c.max_outer);
    r.get("max_cg_iters", c.max_cg_iters);
    r.get("grad_tol", c.grad_tol);
    r.get("armijo_c1", c.armijo_c1);
    r.get("armijo_shrink", c.armijo_shrink);
    r.get("armijo_init_step", c.armijo_init_step);
    r.get("armijo_max_backtracks", c.armijo_max_backtracks);
    r.get("outer_tol", c.outer_tol);
    r.get("refine_grid", c.refine_grid);
    r.get("refine_sweeps", c.refine_sweeps);
    r.get("refine_starts", c.refine_starts);
}

inline void read_td3(TableReader& r, Td3Config& c) {
    r.get("actor_lr", c.actor_lr);
    r.get("critic1_lr", c.critic1_lr);
    r.get("critic2_lr", c.critic2_lr);
    r.get("gamma", c.gamma);
    r.get("critic_tau", c.critic_tau);
    r.get("actor_tau", c.actor_tau);
    r.get("policy_delay", c.policy_delay);
    r.get("target_noise_sigma", c.target_noise_sigma);
    r.get("noise_clip", c.noise_clip);
    r.get("batch_size", c.batch_size);
    r.get("exploration_noise", c.exploration_noise);
    r.get("buffer_capacity", c.buffer_capacity);
    r.get("hidden", c.hidden);
}

inline void read_meta(TableReader& r, MetaConfig& c) {
    r.get("num_tasks", c.num_tasks);
    r.get("inner_steps", c.inner_steps);
    r.get("outer_iters", c.outer_iters);
    r.get("adaptation_steps", c.adaptation_steps);
    r.get("collect_steps", c.collect_steps);
    r.get("val_fraction", c.val_fraction);
    r.get("meta_lr", c.meta_lr);
    r.get("gamma1", c.gamma1);
    r.get("gamma2", c.gamma2);
    r.get("gamma3", c.gamma3);
}

inline void read_env(TableReader& r, EnvConfig& c) {
    std::string mode = ts_mode_name(c.ts_mode);
    r.get("ts_mode", mode);
    c.ts_mode = ts_mode_from_name(mode);
    r.get("horizon", c.horizon);
    r.get("penalty_beta", c.penalty_beta);
    r.get("cache_refresh", c.cache_refresh);
    r.get("cache_cg_iters", c.cache_cg_iters);
    r.get("log_reward", c.log_reward);
    r.get("reward_scale", c.reward_scale);
    r.get("reward_clip", c.reward_clip);
}

inline void read_experiment(TableReader& r, ExperimentSpec& s) {
    std::string mode = mode_name(s.mode), axis = axis_name(s.axis), baseline = baseline_name(s.baseline);
    r.get("mode", mode);
    r.get("axis", axis);
    r.get("baseline", baseline);
    s.mode = mode_from_name(mode);
    s.axis = axis_from_name(axis);
    s.baseline = baseline_from_name(baseline);
    r.get("values", s.values);
    r.get("seeds", s.seeds);
    r.get("output", s.output);
    r.get("eval_steps", s.optimizer.eval_steps);
}

}  // namespace detail

/// Builds an experiment from TOML text. Tables: [scenario], [solver], [td3],
/// [meta], [env], [experiment]; every table and key is optional, and anything
/// not listed is a ConfigError. Unset values keep their defaults, with the
/// scenario defaulting to desk_scenario().
inline ExperimentSpec experiment_from_toml_string(std::string_view text, std::string_view source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "TOML parse error at " << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
           << e.description();
        throw ConfigError(os.str());
    }
    static const std::set<std::string> tables{"scenario", "solver", "td3", "meta", "env", "experiment"};
    for (const auto& [k, v] : root) {
        if (!tables.count(std::string(k.str()))) throw ConfigError("unknown table [" + std::string(k.str()) + "]");
        if (!v.is_table()) throw ConfigError("'" + std::string(k.str()) + "' must be a table");
    }
    ExperimentSpec spec;
    auto with = [&](const char* name, auto&& fn) {
        detail::TableReader r(root[name].as_table(), name);
        fn(r);
        r.finish();
    };
    with("scenario", [&](auto& r) { detail::read_scenario(r, spec.scenario); });
    with("solver", [&](auto& r) { detail::read_solver(r, spec.optimizer.env.solver); });
    with("td3", [&](auto& r) { detail::read_td3(r, spec.optimizer.td3); });
    with("meta", [&](auto& r) { detail::read_meta(r, spec.optimizer.meta); });
    with("env", [&](auto& r) { detail::read_env(r, spec.optimizer.env); });
    with("experiment", [&](auto& r) { detail::read_experiment(r, spec); });
    return spec;
}

inline ExperimentSpec experiment_from_toml_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return experiment_from_toml_string(ss.str(), path);
}

}  // namespace cfisac
