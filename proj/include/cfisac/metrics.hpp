#pragma once

#include "cfisac/channel.hpp"

#include <array>
#include <optional>
#include <string_view>

namespace cfisac {

/// Transmit beams w_{a,k}, stored at index a * K + k.
struct BeamformingSet {
    std::size_t num_aps = 0;
    std::size_t num_users = 0;
    std::vector<VecXc> w;

    BeamformingSet() = default;
    BeamformingSet(std::size_t A, std::size_t K, std::size_t Nt)
        : num_aps(A), num_users(K), w(A * K, VecXc::Zero(static_cast<Eigen::Index>(Nt))) {}

    VecXc& at(std::size_t a, std::size_t k) { return w[a * num_users + k]; }
    const VecXc& at(std::size_t a, std::size_t k) const { return w[a * num_users + k]; }
};

/// Physical TS errors (seconds), A x B.
struct TsErrorMatrix {
    MatX tau;

    TsErrorMatrix() = default;
    TsErrorMatrix(std::size_t A, std::size_t B, double value = 0.0)
        : tau(MatX::Constant(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(B), value)) {}

    double operator()(std::size_t a, std::size_t b) const {
        return tau(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
    double& operator()(std::size_t a, std::size_t b) {
        return tau(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
};

/// SINR of user k on subcarrier s. The channel is frequency flat and the noise
/// level is common to every (k, s), so the value does not depend on s.
inline double sinr(const Scenario& scn, const std::vector<VecXc>& channels, const BeamformingSet& beams, std::size_t k,
                   std::size_t /*s*/) {
    const double noise = scn.config.noise_power_w();
    if (!(noise > 0.0)) throw ConfigError("noise power must be > 0");
    const std::size_t K = scn.K();
    double desired = 0.0;
    double interference = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
        cplx acc{};
        for (std::size_t a = 0; a < scn.A(); ++a) acc += channels[a * K + k].dot(beams.at(a, j));
        if (j == k)
            desired = std::norm(acc);
        else
            interference += std::norm(acc);
    }
    return desired / (interference + noise);
}

struct RateReport {
    double sum = 0.0;
    MatX per_user_subcarrier;  // K x S, bit/s/Hz

    double mean_rate(std::size_t k) const { return per_user_subcarrier.row(static_cast<Eigen::Index>(k)).mean(); }
};

inline RateReport weighted_sum_rate(const Scenario& scn, const std::vector<VecXc>& channels, const BeamformingSet& beams) {
    RateReport r;
    r.per_user_subcarrier.resize(static_cast<Eigen::Index>(scn.K()), static_cast<Eigen::Index>(scn.S()));
    for (std::size_t k = 0; k < scn.K(); ++k)
        for (std::size_t s = 0; s < scn.S(); ++s) {
            const double rate = std::log2(1.0 + sinr(scn, channels, beams, k, s));
            r.per_user_subcarrier(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) = rate;
            r.sum += scn.config.rate_weights[k] * rate;
        }
    return r;
}

enum class Constraint : std::size_t { ts_bounds = 0, rate, tx_box, rx_box, tx_spacing, rx_spacing, power, count };

inline constexpr std::size_t kNumConstraints = static_cast<std::size_t>(Constraint::count);

inline constexpr std::string_view constraint_name(Constraint c) {
    constexpr std::array<std::string_view, kNumConstraints> names{"ts_bounds", "rate",       "tx_box", "rx_box",
                                                                  "tx_spacing", "rx_spacing", "power"};
    return names[static_cast<std::size_t>(c)];
}

/// Per-constraint violation flag and worst excess. Equality counts as satisfied;
/// excesses within round-off (1e-12 relative to the constraint's scale) count as 0.
struct ConstraintReport {
    std::array<bool, kNumConstraints> violated{};
    std::array<double, kNumConstraints> magnitude{};

    bool operator[](Constraint c) const { return violated[static_cast<std::size_t>(c)]; }
    double excess(Constraint c) const { return magnitude[static_cast<std::size_t>(c)]; }

    std::size_t num_violated() const {
        std::size_t n = 0;
        for (bool v : violated) n += v ? 1 : 0;
        return n;
    }

    void record(Constraint c, double excess, double scale) {
        const auto i = static_cast<std::size_t>(c);
        if (excess > 1e-12 * std::max(scale, 1e-300) && excess > magnitude[i]) {
            magnitude[i] = excess;
            violated[i] = true;
        }
    }
};

/// Checks the TS bounds, the rate floor, the MA boxes, the minimum spacing and
/// the per-beam power cap. Never throws.
inline ConstraintReport audit_constraints(const Scenario& scn, const BeamformingSet& beams, const MaLayout& layout,
                                          const std::optional<TsErrorMatrix>& ts_errors = std::nullopt) {
    ConstraintReport rep;
    const auto& cfg = scn.config;
    if (ts_errors) {
        const double scale = std::max(std::abs(cfg.ts_bounds.lo), std::abs(cfg.ts_bounds.hi));
        for (Eigen::Index i = 0; i < ts_errors->tau.size(); ++i) {
            const double t = ts_errors->tau.data()[i];
            rep.record(Constraint::ts_bounds, std::max(cfg.ts_bounds.lo - t, t - cfg.ts_bounds.hi), scale);
        }
    }
    if (beams.w.size() == scn.A() * scn.K() && layout.tx.size() == scn.A()) {
        const auto channels = comm_channels(scn, layout);
        const auto rates = weighted_sum_rate(scn, channels, beams);
        for (std::size_t k = 0; k < scn.K(); ++k)
            for (std::size_t s = 0; s < scn.S(); ++s) {
                const double floor = cfg.rate_floor_at(k, s);
                rep.record(Constraint::rate,
                           floor - rates.per_user_subcarrier(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)),
                           std::max(1.0, std::abs(floor)));
            }
    }
    auto audit_array = [&](const std::vector<VecX>& arrays, const Interval& box, Constraint box_id, Constraint spacing_id) {
        const double scale = std::max({std::abs(box.lo), std::abs(box.hi), 1.0});
        for (const auto& p : arrays) {
            for (Eigen::Index t = 0; t < p.size(); ++t) {
                rep.record(box_id, std::max(box.lo - p[t], p[t] - box.hi), scale);
                if (t > 0) rep.record(spacing_id, cfg.d0_spacing - std::abs(p[t] - p[t - 1]), scale);
            }
        }
    };
    audit_array(layout.tx, cfg.ma_range_tx, Constraint::tx_box, Constraint::tx_spacing);
    audit_array(layout.rx, cfg.ma_range_rx, Constraint::rx_box, Constraint::rx_spacing);
    for (const auto& w : beams.w) rep.record(Constraint::power, w.squaredNorm() - cfg.p_max, cfg.p_max);
    return rep;
}

}  // namespace cfisac
