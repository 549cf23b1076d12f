#pragma once

// Shared fixtures and brute-force reference computations for the test suite.
// The references deliberately avoid the library's helpers (steering vectors,
// derivative tables) and evaluate the defining formulas entry by entry.

#include "cfisac/manifold.hpp"

#include <random>

namespace cfisac::testing {

inline ScenarioConfig desk_config(std::uint64_t seed) {
    ScenarioConfig cfg;
    cfg.num_tx_aps = 2;
    cfg.num_rx_aps = 1;
    cfg.num_users = 2;
    cfg.num_tx_mas = 4;
    cfg.num_rx_mas = 2;
    cfg.num_freq_samples = 8;
    cfg.freq_grid = uniform_frequency_grid(8);
    cfg.ma_range_tx = {-2.0, 2.0};
    cfg.ma_range_rx = {-1.0, 1.0};
    cfg.rate_weights = {1.0, 1.0};
    cfg.seed = seed;
    return cfg;
}

/// Sorted positions inside `box` with neighbour gaps >= d0, drawn by splitting
/// the slack at random.
inline VecX random_positions(std::size_t n, double d0, const Interval& box, std::mt19937_64& rng) {
    const double slack = box.width() - static_cast<double>(n - 1) * d0;
    std::uniform_real_distribution<double> u(0.0, slack);
    std::vector<double> cuts(n);
    for (auto& c : cuts) c = u(rng);
    std::sort(cuts.begin(), cuts.end());
    VecX p(static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < n; ++t) p[static_cast<Eigen::Index>(t)] = box.lo + cuts[t] + static_cast<double>(t) * d0;
    return p;
}

inline MaLayout random_layout(const ScenarioConfig& cfg, std::mt19937_64& rng) {
    MaLayout l;
    for (std::size_t a = 0; a < cfg.num_tx_aps; ++a)
        l.tx.push_back(random_positions(cfg.num_tx_mas, cfg.d0_spacing, cfg.ma_range_tx, rng));
    for (std::size_t b = 0; b < cfg.num_rx_aps; ++b)
        l.rx.push_back(random_positions(cfg.num_rx_mas, cfg.d0_spacing, cfg.ma_range_rx, rng));
    return l;
}

inline VecXc random_complex(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    VecXc v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = cplx(g(rng), g(rng));
    return v;
}

/// Random beams with ||w||^2 uniform in (0, P_max].
inline BeamformingSet random_beams(const Scenario& scn, std::mt19937_64& rng) {
    BeamformingSet w(scn.A(), scn.K(), scn.Nt());
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (auto& v : w.w) {
        v = random_complex(static_cast<Eigen::Index>(scn.Nt()), rng);
        v *= std::sqrt(u(rng) * scn.config.p_max) / v.norm();
    }
    return w;
}

inline TsErrorMatrix random_ts(const Scenario& scn, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(scn.config.ts_bounds.lo, scn.config.ts_bounds.hi);
    TsErrorMatrix ts(scn.A(), scn.B());
    for (Eigen::Index i = 0; i < ts.tau.size(); ++i) ts.tau.data()[i] = u(rng);
    return ts;
}

inline PhasorVector random_phasor(const Scenario& scn, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-kPi, kPi);
    PhasorVector v(scn.A(), scn.B(), scn.S());
    for (Eigen::Index i = 0; i < v.values.size(); ++i) v.values[i] = std::polar(1.0, u(rng));
    return v;
}

/// Noiseless echo at receiver b for a target at `d`, with the reflectivities
/// held fixed. Returns the S * N_r stacked vector.
inline VecXc mean_echo(const Scenario& scn, const MaLayout& layout, const BeamformingSet& beams,
                       const PhasorVector& theta, std::size_t b, const Vec2& d) {
    const auto& geo = scn.geometry;
    const std::size_t Nr = scn.Nr(), Nt = scn.Nt(), S = scn.S();
    VecXc y = VecXc::Zero(static_cast<Eigen::Index>(S * Nr));
    for (std::size_t a = 0; a < scn.A(); ++a) {
        const Vec2 ra = d - geo.tx_ap_pos[a];
        const Vec2 rb = d - geo.rx_ap_pos[b];
        const double tau = (ra.norm() + rb.norm()) / kSpeedOfLight;
        const double phi_a = std::atan2(ra.y(), ra.x());
        const double phi_b = std::atan2(rb.y(), rb.x());
        for (std::size_t s = 0; s < S; ++s) {
            const double f = scn.config.freq_grid[s];
            cplx gx{};
            for (std::size_t t = 0; t < Nt; ++t) {
                cplx xt{};
                for (std::size_t k = 0; k < scn.K(); ++k)
                    xt += beams.at(a, k)[static_cast<Eigen::Index>(t)] *
                          scn.symbols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
                const double p = layout.tx[a][static_cast<Eigen::Index>(t)];
                gx += std::exp(cplx(0.0, kTwoPi * p * std::sin(phi_a))) * xt;  // conj of the steering entry
            }
            const cplx common = scn.beta_of(a, b) * std::exp(cplx(0.0, -kTwoPi * f * tau)) * gx * theta(a, b, s);
            for (std::size_t r = 0; r < Nr; ++r) {
                const double p = layout.rx[b][static_cast<Eigen::Index>(r)];
                y[static_cast<Eigen::Index>(s * Nr + r)] += common * std::exp(cplx(0.0, -kTwoPi * p * std::sin(phi_b)));
            }
        }
    }
    return y;
}

/// FIM of receiver b assembled from central differences of the mean echo.
inline Eigen::Matrix2d fd_fim(const Scenario& scn, const MaLayout& layout, const BeamformingSet& beams,
                              const PhasorVector& theta, std::size_t b, double h = 1e-6) {
    const Vec2 d = scn.geometry.target;
    VecXc deriv[2];
    for (int i = 0; i < 2; ++i) {
        Vec2 e = Vec2::Zero();
        e[i] = h;
        deriv[i] = (mean_echo(scn, layout, beams, theta, b, d + e) - mean_echo(scn, layout, beams, theta, b, d - e)) / (2.0 * h);
    }
    Eigen::Matrix2d F;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) F(i, j) = 2.0 / scn.sensing_noise() * deriv[i].dot(deriv[j]).real();
    return F;
}

/// Central-difference Euclidean gradient of the total CRLB in the real-plane
/// sense (d/dRe + j d/dIm).
inline VecXc fd_gradient(const SensingDerivatives& sd, const PhasorVector& theta, double h = 1e-6) {
    VecXc g(theta.values.size());
    PhasorVector p = theta;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        const cplx z = theta.values[j];
        double parts[2];
        for (int c = 0; c < 2; ++c) {
            const cplx step = c == 0 ? cplx(h, 0.0) : cplx(0.0, h);
            p.values[j] = z + step;
            const double up = sd.objective(p);
            p.values[j] = z - step;
            const double dn = sd.objective(p);
            parts[c] = (up - dn) / (2.0 * h);
        }
        p.values[j] = z;
        g[j] = cplx(parts[0], parts[1]);
    }
    return g;
}

inline double rel_err(const VecXc& a, const VecXc& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace cfisac::testing
