#pragma once

#include "cfisac/scenario.hpp"
#include "cfisac/td3.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace cfisac {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// FNV-1a hash of everything that fixes a scenario's dimensions and draws.
inline std::string scenario_fingerprint(const ScenarioConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17) << c.num_tx_aps << ' ' << c.num_rx_aps << ' ' << c.num_users << ' ' << c.num_tx_mas
       << ' ' << c.num_rx_mas << ' ' << c.num_freq_samples << ' ';
    for (double f : c.freq_grid) os << f << ' ';
    os << c.ring_radius << ' ' << c.pl0_db << ' ' << c.exp_user << ' ' << c.exp_target << ' ' << c.num_paths << ' '
       << c.noise_power_dbm << ' ' << c.rcs << ' ' << c.d0_spacing << ' ' << c.ma_range_tx.lo << ' ' << c.ma_range_tx.hi
       << ' ' << c.ma_range_rx.lo << ' ' << c.ma_range_rx.hi << ' ' << c.p_max << ' ';
    for (double r : c.rate_floor) os << r << ' ';
    for (double w : c.rate_weights) os << w << ' ';
    os << c.ts_bounds.lo << ' ' << c.ts_bounds.hi << ' ' << c.seed << ' ' << c.target.x() << ' ' << c.target.y() << ' '
       << c.stacked_noise_exponent;
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    return hex.str();
}

namespace detail {

/// Each double as the 16 lowercase hex digits of its IEEE-754 bit pattern.
inline std::string to_hex(const VecX& v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(static_cast<std::size_t>(v.size()) * 16);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(v[i]);
        for (int shift = 60; shift >= 0; shift -= 4) s += digits[(bits >> shift) & 0xF];
    }
    return s;
}

inline VecX from_hex(const std::string& s, const char* what) {
    if (s.size() % 16 != 0) throw CheckpointError(std::string("checkpoint: bad hex length in ") + what);
    VecX v(static_cast<Eigen::Index>(s.size() / 16));
    for (std::size_t i = 0; i < s.size() / 16; ++i) {
        std::uint64_t bits = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            const char c = s[i * 16 + j];
            int d;
            if (c >= '0' && c <= '9') d = c - '0';
            else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
            else throw CheckpointError(std::string("checkpoint: bad hex digit in ") + what);
            bits = (bits << 4) | static_cast<std::uint64_t>(d);
        }
        v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(bits);
    }
    return v;
}

inline nlohmann::json mlp_to_json(const nn::Mlp& m) {
    nlohmann::json acts = nlohmann::json::array();
    for (auto a : m.activations()) acts.push_back(nn::activation_name(a));
    return {{"layer_widths", m.widths()}, {"activations", acts}, {"weights", to_hex(m.params())}};
}

inline nn::Mlp mlp_from_json(const nlohmann::json& j, const char* what) {
    const auto widths = j.at("layer_widths").get<std::vector<std::size_t>>();
    std::vector<nn::Activation> acts;
    for (const auto& a : j.at("activations")) acts.push_back(nn::activation_from_name(a.get<std::string>()));
    if (acts.size() + 1 != widths.size()) throw CheckpointError(std::string("checkpoint: activation count in ") + what);
    nn::Mlp m(widths, acts.front(), acts.back());
    m.set_activations(acts);
    const VecX w = from_hex(j.at("weights").get<std::string>(), what);
    if (w.size() != m.params().size()) throw CheckpointError(std::string("checkpoint: weight count in ") + what);
    m.params() = w;
    return m;
}

inline nlohmann::json adam_to_json(const nn::Adam& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
            {"t", a.t},   {"m", to_hex(a.m)},  {"v", to_hex(a.v)}};
}

inline nn::Adam adam_from_json(const nlohmann::json& j, Eigen::Index n, const char* what) {
    nn::Adam a;
    a.lr = j.at("lr").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps = j.at("eps").get<double>();
    a.t = j.at("t").get<std::uint64_t>();
    a.m = from_hex(j.at("m").get<std::string>(), what);
    a.v = from_hex(j.at("v").get<std::string>(), what);
    if (a.m.size() != n || a.v.size() != n) throw CheckpointError(std::string("checkpoint: optimizer size in ") + what);
    return a;
}

}  // namespace detail

inline nlohmann::json td3_config_to_json(const Td3Config& c) {
    return {{"actor_lr", c.actor_lr},
            {"critic1_lr", c.critic1_lr},
            {"critic2_lr", c.critic2_lr},
            {"gamma", c.gamma},
            {"critic_tau", c.critic_tau},
            {"actor_tau", c.actor_tau},
            {"policy_delay", c.policy_delay},
            {"target_noise_sigma", c.target_noise_sigma},
            {"noise_clip", c.noise_clip},
            {"batch_size", c.batch_size},
            {"exploration_noise", c.exploration_noise},
            {"buffer_capacity", c.buffer_capacity},
            {"hidden", c.hidden}};
}

inline Td3Config td3_config_from_json(const nlohmann::json& j) {
    Td3Config c;
    c.actor_lr = j.at("actor_lr").get<double>();
    c.critic1_lr = j.at("critic1_lr").get<double>();
    c.critic2_lr = j.at("critic2_lr").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.critic_tau = j.at("critic_tau").get<double>();
    c.actor_tau = j.at("actor_tau").get<double>();
    c.policy_delay = j.at("policy_delay").get<std::size_t>();
    c.target_noise_sigma = j.at("target_noise_sigma").get<double>();
    c.noise_clip = j.at("noise_clip").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.exploration_noise = j.at("exploration_noise").get<double>();
    c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    return c;
}

inline std::string checkpoint_to_string(const Td3Learner& L, const std::string& fingerprint) {
    std::ostringstream rng;
    rng << L.rng;
    nlohmann::json j{{"format_version", kCheckpointFormatVersion},
                     {"scenario_fingerprint", fingerprint},
                     {"state_dim", L.state_dim},
                     {"action_dim", L.action_dim},
                     {"updates", L.updates},
                     {"td3", td3_config_to_json(L.cfg)},
                     {"networks",
                      {{"actor", detail::mlp_to_json(L.actor)},
                       {"critic1", detail::mlp_to_json(L.critic1)},
                       {"critic2", detail::mlp_to_json(L.critic2)},
                       {"actor_target", detail::mlp_to_json(L.actor_target)},
                       {"critic1_target", detail::mlp_to_json(L.critic1_target)},
                       {"critic2_target", detail::mlp_to_json(L.critic2_target)}}},
                     {"optimizers",
                      {{"actor", detail::adam_to_json(L.actor_opt)},
                       {"critic1", detail::adam_to_json(L.critic1_opt)},
                       {"critic2", detail::adam_to_json(L.critic2_opt)}}},
                     {"rng_state", rng.str()}};
    return j.dump(1) + "\n";
}

using WarningSink = std::function<void(const std::string&)>;

/// Parses a checkpoint. Malformed JSON raises CheckpointError naming the byte
/// offset; a different format version is rejected; a fingerprint other than
/// `expected_fingerprint` (when non-empty) is reported to `warn` and the load
/// goes on. Nothing is returned unless every field parsed.
inline Td3Learner checkpoint_from_string(const std::string& text, const std::string& expected_fingerprint = "",
                                         const WarningSink& warn = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError("checkpoint parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointFormatVersion) + ")");
        const auto fp = j.at("scenario_fingerprint").get<std::string>();
        if (!expected_fingerprint.empty() && fp != expected_fingerprint && warn)
            warn("checkpoint was written for scenario " + fp + ", loading into scenario " + expected_fingerprint);
        Td3Learner L;
        L.cfg = td3_config_from_json(j.at("td3"));
        L.state_dim = j.at("state_dim").get<std::size_t>();
        L.action_dim = j.at("action_dim").get<std::size_t>();
        L.updates = j.at("updates").get<std::uint64_t>();
        const auto& n = j.at("networks");
        L.actor = detail::mlp_from_json(n.at("actor"), "actor");
        L.critic1 = detail::mlp_from_json(n.at("critic1"), "critic1");
        L.critic2 = detail::mlp_from_json(n.at("critic2"), "critic2");
        L.actor_target = detail::mlp_from_json(n.at("actor_target"), "actor_target");
        L.critic1_target = detail::mlp_from_json(n.at("critic1_target"), "critic1_target");
        L.critic2_target = detail::mlp_from_json(n.at("critic2_target"), "critic2_target");
        if (L.actor.input_dim() != L.state_dim || L.actor.output_dim() != L.action_dim ||
            L.critic1.input_dim() != L.state_dim + L.action_dim)
            throw CheckpointError("checkpoint: network shapes do not match the recorded dimensions");
        const auto& o = j.at("optimizers");
        L.actor_opt = detail::adam_from_json(o.at("actor"), L.actor.params().size(), "actor optimizer");
        L.critic1_opt = detail::adam_from_json(o.at("critic1"), L.critic1.params().size(), "critic1 optimizer");
        L.critic2_opt = detail::adam_from_json(o.at("critic2"), L.critic2.params().size(), "critic2 optimizer");
        std::istringstream rng(j.at("rng_state").get<std::string>());
        rng >> L.rng;
        if (!rng) throw CheckpointError("checkpoint: bad rng state");
        return L;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const Td3Learner& L, const std::string& fingerprint, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path + " for writing");
    f << checkpoint_to_string(L, fingerprint);
    if (!f) throw CheckpointError("failed writing " + path);
}

inline Td3Learner load_checkpoint(const std::string& path, const std::string& expected_fingerprint = "",
                                  const WarningSink& warn = {}) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return checkpoint_from_string(ss.str(), expected_fingerprint, warn);
}

}  // namespace cfisac
