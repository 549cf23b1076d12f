#pragma once

#include "cfisac/common.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>

namespace cfisac {

/// Uniform grid of `count` samples spanning `bandwidth_hz` around `carrier_hz`
/// (endpoints included). A single sample sits on the carrier.
inline std::vector<double> uniform_frequency_grid(std::size_t count, double carrier_hz = 3.5e9,
                                                  double bandwidth_hz = 100e6) {
    std::vector<double> grid(count);
    if (count == 1) {
        grid[0] = carrier_hz;
        return grid;
    }
    const double step = bandwidth_hz / static_cast<double>(count - 1);
    for (std::size_t s = 0; s < count; ++s)
        grid[s] = carrier_hz - 0.5 * bandwidth_hz + step * static_cast<double>(s);
    return grid;
}

/// Declarative description of one problem instance. Positions of movable
/// antennas are in wavelengths, delays in seconds, powers in watts.
struct ScenarioConfig {
    std::size_t num_tx_aps = 3;
    std::size_t num_rx_aps = 2;
    std::size_t num_users = 2;
    std::size_t num_tx_mas = 16;
    std::size_t num_rx_mas = 4;
    std::size_t num_freq_samples = 16;
    std::vector<double> freq_grid = uniform_frequency_grid(16);
    double ring_radius = 100.0;
    double pl0_db = -30.0;
    double exp_user = 2.8;
    double exp_target = 2.2;
    std::size_t num_paths = 3;
    double noise_power_dbm = -80.0;
    double rcs = 3.0;
    double d0_spacing = 0.5;
    // 16 elements at half-wavelength spacing need 7.5 wavelengths of travel.
    Interval ma_range_tx{-4.0, 4.0};
    Interval ma_range_rx{-2.0, 2.0};
    double p_max = 1.0;
    // Either one value for every (k, s) or K * S values, row-major in k.
    std::vector<double> rate_floor{1.0};
    std::vector<double> rate_weights{1.0, 1.0};
    Interval ts_bounds{0.4e-9, 0.6e-9};
    std::uint64_t seed = 7;
    // Kept for completeness; no constraint consumes it.
    double sensing_accuracy = 0.05;
    Vec2 target{0.0, 0.0};
    // Use (sigma^2)^S instead of sigma^2 as the sensing noise normalisation.
    bool stacked_noise_exponent = false;

    double noise_power_w() const { return dbm_to_watt(noise_power_dbm); }

    double carrier_hz() const {
        double sum = 0.0;
        for (double f : freq_grid) sum += f;
        return sum / static_cast<double>(freq_grid.size());
    }

    double wavelength_m() const { return kSpeedOfLight / carrier_hz(); }

    double rate_floor_at(std::size_t k, std::size_t s) const {
        if (rate_floor.size() == 1) return rate_floor.front();
        return rate_floor[k * num_freq_samples + s];
    }
};

/// Throws ConfigError naming the first violated requirement.
inline void validate(const ScenarioConfig& cfg) {
    auto fail = [](const std::string& what) { throw ConfigError("invalid scenario config: " + what); };
    if (cfg.num_tx_aps < 1) fail("num_tx_aps >= 1");
    if (cfg.num_rx_aps < 1) fail("num_rx_aps >= 1");
    if (cfg.num_users < 1) fail("num_users >= 1");
    if (cfg.num_tx_mas < 1) fail("num_tx_mas >= 1");
    if (cfg.num_rx_mas < 1) fail("num_rx_mas >= 1");
    if (cfg.num_paths < 1) fail("num_paths >= 1");
    if (cfg.num_freq_samples < 1) fail("num_freq_samples >= 1");
    if (cfg.freq_grid.size() != cfg.num_freq_samples)
        fail("freq_grid length (" + std::to_string(cfg.freq_grid.size()) + ") == num_freq_samples (" +
             std::to_string(cfg.num_freq_samples) + ")");
    for (std::size_t s = 0; s < cfg.freq_grid.size(); ++s) {
        if (!(cfg.freq_grid[s] > 0.0)) fail("freq_grid entries > 0");
        if (s > 0 && !(cfg.freq_grid[s] > cfg.freq_grid[s - 1])) fail("freq_grid strictly increasing");
    }
    if (!(cfg.ring_radius > 0.0)) fail("ring_radius > 0");
    if (!(cfg.d0_spacing >= 0.0)) fail("d0_spacing >= 0");
    if (!(cfg.p_max > 0.0)) fail("p_max > 0");
    if (!(cfg.rcs > 0.0)) fail("rcs > 0");
    if (!(cfg.ts_bounds.lo <= cfg.ts_bounds.hi)) fail("ts_bounds: tau_min <= tau_max");
    auto check_range = [&](const Interval& r, std::size_t n, const char* name) {
        const double need = r.lo + static_cast<double>(n - 1) * cfg.d0_spacing;
        if (!(need <= r.hi + 1e-12)) {
            std::ostringstream os;
            os << name << ": p_min + (N-1)*D0 <= p_max (" << r.lo << " + " << (n - 1) << "*" << cfg.d0_spacing
               << " = " << need << " > " << r.hi << ")";
            fail(os.str());
        }
    };
    check_range(cfg.ma_range_tx, cfg.num_tx_mas, "ma_range_tx");
    check_range(cfg.ma_range_rx, cfg.num_rx_mas, "ma_range_rx");
    if (cfg.rate_weights.size() != cfg.num_users) fail("rate_weights length == num_users");
    for (double w : cfg.rate_weights)
        if (!(w > 0.0)) fail("rate_weights > 0");
    if (cfg.rate_floor.size() != 1 && cfg.rate_floor.size() != cfg.num_users * cfg.num_freq_samples)
        fail("rate_floor has 1 or K*S entries");
}

/// 10^(pl0_db/10) * (d / 1 m)^(-exponent).
inline double path_loss_linear(double distance_m, double exponent, double pl0_db) {
    if (!(distance_m > 0.0)) throw DomainError("path_loss_linear: distance must be > 0");
    return db_to_linear(pl0_db) * std::pow(distance_m, -exponent);
}

/// Bistatic link through the target for one (transmit AP, receive AP) pair.
struct TargetLink {
    double kappa_a = 0.0;
    double kappa_b = 0.0;
    double tau_a = 0.0;
    double tau_b = 0.0;
    double tau_ab = 0.0;
    double phi_a = 0.0;
    double phi_b = 0.0;
};

/// Distances, delays and angles of the path AP a -> target -> AP b.
/// Angles are atan2(target - ap), which agrees with the arctan + pi*1(dx < dx_ap)
/// branch rule wherever that rule is defined.
inline TargetLink target_geometry(const Vec2& d, const Vec2& d_a, const Vec2& d_b) {
    const Vec2 ra = d - d_a;
    const Vec2 rb = d - d_b;
    TargetLink link;
    link.kappa_a = ra.norm();
    link.kappa_b = rb.norm();
    if (link.kappa_a <= 0.0 || link.kappa_b <= 0.0)
        throw GeometryError("target coincides with an access point");
    link.tau_a = link.kappa_a / kSpeedOfLight;
    link.tau_b = link.kappa_b / kSpeedOfLight;
    link.tau_ab = link.tau_a + link.tau_b;
    link.phi_a = std::atan2(ra.y(), ra.x());
    link.phi_b = std::atan2(rb.y(), rb.x());
    return link;
}

struct Geometry {
    Vec2 target{0.0, 0.0};
    std::vector<Vec2> tx_ap_pos;
    std::vector<Vec2> rx_ap_pos;
    std::vector<Vec2> user_pos;
    std::vector<TargetLink> links;  // index a * B + b

    const TargetLink& link(std::size_t a, std::size_t b) const { return links[a * rx_ap_pos.size() + b]; }

    void refresh_links() {
        links.clear();
        links.reserve(tx_ap_pos.size() * rx_ap_pos.size());
        for (const auto& da : tx_ap_pos)
            for (const auto& db : rx_ap_pos) links.push_back(target_geometry(target, da, db));
    }
};

/// One propagation path of an AP-user link. `delay` is in cycles (the channel is
/// frequency flat), `aod` in radians.
struct PathParams {
    cplx gain;
    double aod = 0.0;
    double delay = 0.0;
};

struct Scenario {
    ScenarioConfig config;
    Geometry geometry;
    std::vector<std::vector<PathParams>> paths;  // index a * K + k
    std::vector<double> beta_phase;              // index a * B + b
    std::vector<cplx> beta;                      // index a * B + b
    MatXc symbols;                               // S x K, unit average power per column

    std::size_t A() const { return config.num_tx_aps; }
    std::size_t B() const { return config.num_rx_aps; }
    std::size_t K() const { return config.num_users; }
    std::size_t Nt() const { return config.num_tx_mas; }
    std::size_t Nr() const { return config.num_rx_mas; }
    std::size_t S() const { return config.num_freq_samples; }

    const std::vector<PathParams>& paths_of(std::size_t a, std::size_t k) const { return paths[a * K() + k]; }
    cplx beta_of(std::size_t a, std::size_t b) const { return beta[a * B() + b]; }

    double sensing_noise() const {
        const double s2 = config.noise_power_w();
        return config.stacked_noise_exponent ? std::pow(s2, static_cast<double>(S())) : s2;
    }

    /// Recompute bistatic links and reflectivity magnitudes after moving the
    /// target or an AP; reflectivity phases are kept.
    void refresh_target() {
        geometry.refresh_links();
        beta.assign(A() * B(), cplx{});
        for (std::size_t a = 0; a < A(); ++a)
            for (std::size_t b = 0; b < B(); ++b) {
                const auto& l = geometry.link(a, b);
                const double mag = std::sqrt(config.rcs * path_loss_linear(l.kappa_a, config.exp_target, config.pl0_db) *
                                             path_loss_linear(l.kappa_b, config.exp_target, config.pl0_db));
                beta[a * B() + b] = std::polar(mag, beta_phase[a * B() + b]);
            }
    }
};

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline int hadamard_entry(std::size_t row, std::size_t col) {
    // Sylvester construction: (-1)^{popcount(row & col)}.
    return (std::popcount(row & col) % 2 == 0) ? 1 : -1;
}

inline cplx qpsk(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 3);
    static constexpr double h = 0.70710678118654752440;
    switch (pick(rng)) {
        case 0: return {h, h};
        case 1: return {-h, h};
        case 2: return {-h, -h};
        default: return {h, -h};
    }
}

/// QPSK block with (1/S) sum_s c_s c_s^H = I whenever S is a power of two and
/// K <= S (Hadamard columns with random row and column QPSK rotations);
/// i.i.d. QPSK otherwise.
inline MatXc draw_symbols(std::size_t S, std::size_t K, std::mt19937_64& rng) {
    MatXc c(S, K);
    if (is_power_of_two(S) && K <= S) {
        std::vector<std::size_t> cols(S);
        for (std::size_t i = 0; i < S; ++i) cols[i] = i;
        std::shuffle(cols.begin(), cols.end(), rng);
        std::vector<cplx> row_rot(S), col_rot(K);
        std::uniform_int_distribution<int> quarter(0, 3);
        for (auto& r : row_rot) r = qpsk(rng);
        for (auto& r : col_rot) r = std::pow(kJ, quarter(rng));
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < K; ++k)
                c(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) =
                    static_cast<double>(hadamard_entry(s, cols[k])) * row_rot[s] * col_rot[k];
        return c;
    }
    for (Eigen::Index s = 0; s < c.rows(); ++s)
        for (Eigen::Index k = 0; k < c.cols(); ++k) c(s, k) = qpsk(rng);
    return c;
}

inline Vec2 ring_point(double radius, double angle) { return {radius * std::cos(angle), radius * std::sin(angle)}; }

inline void draw_user_links(Scenario& scn, std::mt19937_64& rng) {
    const auto& cfg = scn.config;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> aod(-kPi / 2.0, kPi / 2.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    scn.paths.assign(scn.A() * scn.K(), {});
    for (std::size_t a = 0; a < scn.A(); ++a)
        for (std::size_t k = 0; k < scn.K(); ++k) {
            const double dist = (scn.geometry.tx_ap_pos[a] - scn.geometry.user_pos[k]).norm();
            const double var = path_loss_linear(std::max(dist, 1.0), cfg.exp_user, cfg.pl0_db) /
                               static_cast<double>(cfg.num_paths);
            auto& pl = scn.paths[a * scn.K() + k];
            pl.resize(cfg.num_paths);
            for (auto& p : pl) {
                const double re = normal(rng), im = normal(rng);
                p.gain = std::sqrt(var / 2.0) * cplx(re, im);
                p.aod = aod(rng);
                p.delay = unit(rng);
            }
        }
}

}  // namespace detail

/// Target at `config.target` (origin by default); APs and users at i.i.d.
/// uniform angles on the ring. Draw order: tx APs, rx APs, users, AP-user
/// paths, reflectivity phases, symbol block.
inline Scenario build_scenario(const ScenarioConfig& config) {
    validate(config);
    Scenario scn;
    scn.config = config;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    auto& g = scn.geometry;
    g.target = config.target;
    for (std::size_t a = 0; a < config.num_tx_aps; ++a) g.tx_ap_pos.push_back(detail::ring_point(config.ring_radius, angle(rng)));
    for (std::size_t b = 0; b < config.num_rx_aps; ++b) g.rx_ap_pos.push_back(detail::ring_point(config.ring_radius, angle(rng)));
    for (std::size_t k = 0; k < config.num_users; ++k) g.user_pos.push_back(detail::ring_point(config.ring_radius, angle(rng)));
    detail::draw_user_links(scn, rng);
    scn.beta_phase.resize(config.num_tx_aps * config.num_rx_aps);
    for (auto& ph : scn.beta_phase) ph = angle(rng);
    scn.symbols = detail::draw_symbols(config.num_freq_samples, config.num_users, rng);
    scn.refresh_target();
    return scn;
}

/// Same APs, target and reflectivities; users re-placed on the ring and their
/// multipath redrawn from `user_seed`. Used to generate related tasks.
inline Scenario with_resampled_users(const Scenario& base, std::uint64_t user_seed) {
    Scenario scn = base;
    std::mt19937_64 rng(user_seed);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    for (auto& u : scn.geometry.user_pos) u = detail::ring_point(base.config.ring_radius, angle(rng));
    detail::draw_user_links(scn, rng);
    return scn;
}

/// Same scenario with the target moved to `target`.
inline Scenario with_target(const Scenario& base, const Vec2& target) {
    Scenario scn = base;
    scn.config.target = target;
    scn.geometry.target = target;
    scn.refresh_target();
    return scn;
}

}  // namespace cfisac
