#pragma once

#include "cfisac/scenario.hpp"

namespace cfisac {

/// Movable-antenna positions (wavelengths), one sorted vector per AP.
struct MaLayout {
    std::vector<VecX> tx;  // per transmit AP, N_t entries
    std::vector<VecX> rx;  // per receive AP, N_r entries
};

/// Uniform array with `spacing` between neighbours, centred in `range`.
inline VecX uniform_positions(std::size_t n, double spacing, const Interval& range) {
    VecX p(static_cast<Eigen::Index>(n));
    const double c = range.mid();
    for (std::size_t t = 0; t < n; ++t)
        p[static_cast<Eigen::Index>(t)] = c + (static_cast<double>(t) - 0.5 * static_cast<double>(n - 1)) * spacing;
    return p;
}

/// Fixed-position reference layout: half-wavelength (or D0, if larger) uniform
/// arrays centred in each box.
inline MaLayout fixed_position_layout(const ScenarioConfig& cfg) {
    const double spacing = std::max(0.5, cfg.d0_spacing);
    MaLayout l;
    l.tx.assign(cfg.num_tx_aps, uniform_positions(cfg.num_tx_mas, spacing, cfg.ma_range_tx));
    l.rx.assign(cfg.num_rx_aps, uniform_positions(cfg.num_rx_mas, spacing, cfg.ma_range_rx));
    return l;
}

/// Field-response vector e^{-j 2 pi p_t sin(angle)} for every element.
inline VecXc steering(const VecX& positions, double angle) {
    const double s = std::sin(angle);
    VecXc g(positions.size());
    for (Eigen::Index t = 0; t < positions.size(); ++t) g[t] = std::polar(1.0, -kTwoPi * positions[t] * s);
    return g;
}

inline VecXc steering_tx(const VecX& p_a, double angle) { return steering(p_a, angle); }
inline VecXc steering_rx(const VecX& p_b, double angle) { return steering(p_b, angle); }

/// d/d(angle) of the steering vector, entrywise -j 2 pi p_t cos(angle) g_t.
inline VecXc steering_angle_derivative(const VecX& positions, double angle) {
    const VecXc g = steering(positions, angle);
    const double c = std::cos(angle);
    VecXc dg(positions.size());
    for (Eigen::Index t = 0; t < positions.size(); ++t) dg[t] = -kJ * kTwoPi * positions[t] * c * g[t];
    return dg;
}

/// Frequency-flat multipath channel of the link AP a -> user k.
inline VecXc comm_channel(const Scenario& scn, const MaLayout& layout, std::size_t a, std::size_t k) {
    VecXc h = VecXc::Zero(static_cast<Eigen::Index>(scn.Nt()));
    for (const auto& path : scn.paths_of(a, k))
        h += path.gain * std::polar(1.0, -kTwoPi * path.delay) * steering(layout.tx[a], path.aod);
    return h;
}

/// All AP-user channels, index a * K + k.
inline std::vector<VecXc> comm_channels(const Scenario& scn, const MaLayout& layout) {
    std::vector<VecXc> hs;
    hs.reserve(scn.A() * scn.K());
    for (std::size_t a = 0; a < scn.A(); ++a)
        for (std::size_t k = 0; k < scn.K(); ++k) hs.push_back(comm_channel(scn, layout, a, k));
    return hs;
}

/// Per-subcarrier sensing channel beta e^{-j 2 pi f tau_ab} g_b g_a^H (rank one).
inline MatXc sensing_channel(const Scenario& scn, const MaLayout& layout, std::size_t a, std::size_t b, std::size_t s) {
    const auto& link = scn.geometry.link(a, b);
    const cplx gain = scn.beta_of(a, b) * std::polar(1.0, -kTwoPi * scn.config.freq_grid[s] * link.tau_ab);
    return gain * steering_rx(layout.rx[b], link.phi_b) * steering_tx(layout.tx[a], link.phi_a).adjoint();
}

/// First derivatives of the bistatic delay and the two angles with respect to
/// the target coordinates (d_x, d_y).
struct AngleDelayDerivs {
    double dtau_dx = 0.0;
    double dtau_dy = 0.0;
    double dphia_dx = 0.0;
    double dphib_dx = 0.0;
    double dphia_dy = 0.0;
    double dphib_dy = 0.0;
};

inline AngleDelayDerivs angle_delay_derivs(const Vec2& d, const Vec2& d_a, const Vec2& d_b) {
    const Vec2 ra = d - d_a;
    const Vec2 rb = d - d_b;
    const double ka2 = ra.squaredNorm();
    const double kb2 = rb.squaredNorm();
    if (ka2 <= 0.0 || kb2 <= 0.0) throw GeometryError("target coincides with an access point");
    const double ka = std::sqrt(ka2);
    const double kb = std::sqrt(kb2);
    AngleDelayDerivs out;
    out.dtau_dx = (ra.x() / ka + rb.x() / kb) / kSpeedOfLight;
    out.dtau_dy = (ra.y() / ka + rb.y() / kb) / kSpeedOfLight;
    out.dphia_dx = -ra.y() / ka2;
    out.dphib_dx = -rb.y() / kb2;
    out.dphia_dy = ra.x() / ka2;
    out.dphib_dy = rb.x() / kb2;
    return out;
}

struct SteeringPositionDerivs {
    VecXc drx_dx;  // d g_b / d d_x
    VecXc dtx_dx;  // d g_a / d d_x
    VecXc drx_dy;
    VecXc dtx_dy;
};

inline SteeringPositionDerivs steering_position_derivs(const MaLayout& layout, const Geometry& geometry, std::size_t a,
                                                       std::size_t b) {
    const auto& link = geometry.link(a, b);
    const auto dd = angle_delay_derivs(geometry.target, geometry.tx_ap_pos[a], geometry.rx_ap_pos[b]);
    const VecXc gb_dphi = steering_angle_derivative(layout.rx[b], link.phi_b);
    const VecXc ga_dphi = steering_angle_derivative(layout.tx[a], link.phi_a);
    return {gb_dphi * dd.dphib_dx, ga_dphi * dd.dphia_dx, gb_dphi * dd.dphib_dy, ga_dphi * dd.dphia_dy};
}

}  // namespace cfisac
