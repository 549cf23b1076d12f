#pragma once

#include "cfisac/metrics.hpp"

#include <limits>
#include <span>

namespace cfisac {

/// Unit-modulus TS phasors, blocked as [theta_{1,1}, ..., theta_{A,1}, ...,
/// theta_{A,B}], each block holding one entry per frequency sample.
struct PhasorVector {
    std::size_t num_tx = 0;
    std::size_t num_rx = 0;
    std::size_t num_freq = 0;
    VecXc values;

    PhasorVector() = default;
    PhasorVector(std::size_t A, std::size_t B, std::size_t S)
        : num_tx(A), num_rx(B), num_freq(S), values(VecXc::Ones(static_cast<Eigen::Index>(A * B * S))) {}

    Eigen::Index index(std::size_t a, std::size_t b, std::size_t s) const {
        return static_cast<Eigen::Index>((b * num_tx + a) * num_freq + s);
    }
    cplx operator()(std::size_t a, std::size_t b, std::size_t s) const { return values[index(a, b, s)]; }
    cplx& operator()(std::size_t a, std::size_t b, std::size_t s) { return values[index(a, b, s)]; }

    auto block(std::size_t a, std::size_t b) const {
        return values.segment(index(a, b, 0), static_cast<Eigen::Index>(num_freq));
    }

    double max_modulus_error() const {
        double e = 0.0;
        for (Eigen::Index j = 0; j < values.size(); ++j) e = std::max(e, std::abs(std::abs(values[j]) - 1.0));
        return e;
    }
};

/// theta_{a,b}[s] = e^{-j 2 pi f_s tau_{a,b}}.
inline PhasorVector phasor_from_ts(const TsErrorMatrix& ts, const std::vector<double>& freq_grid) {
    const auto A = static_cast<std::size_t>(ts.tau.rows());
    const auto B = static_cast<std::size_t>(ts.tau.cols());
    PhasorVector v(A, B, freq_grid.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t s = 0; s < freq_grid.size(); ++s) v(a, b, s) = std::polar(1.0, -kTwoPi * freq_grid[s] * ts(a, b));
    return v;
}

/// Per-sample precoded transmit vector sum_k w_{a,k} c_{s,k} (no TS rotation).
inline VecXc precoded_symbol(const BeamformingSet& beams, const MatXc& symbols, std::size_t a, std::size_t s) {
    VecXc x = VecXc::Zero(beams.at(a, 0).size());
    for (std::size_t k = 0; k < beams.num_users; ++k)
        x += beams.at(a, k) * symbols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
    return x;
}

/// Stacked transmit signal of AP a as seen by receiver b: block s is
/// (sum_k w_{a,k} c_{s,k}) * theta_{a,b}[s]. `theta_ab` holds S entries.
inline VecXc stacked_tx(const BeamformingSet& beams, const MatXc& symbols, std::size_t a, const VecXc& theta_ab) {
    const auto S = static_cast<std::size_t>(symbols.rows());
    if (static_cast<std::size_t>(theta_ab.size()) != S || beams.num_users != static_cast<std::size_t>(symbols.cols()) ||
        a >= beams.num_aps)
        throw std::invalid_argument("stacked_tx: dimension mismatch");
    const auto Nt = beams.at(a, 0).size();
    VecXc x(Nt * static_cast<Eigen::Index>(S));
    for (std::size_t s = 0; s < S; ++s)
        x.segment(static_cast<Eigen::Index>(s) * Nt, Nt) = precoded_symbol(beams, symbols, a, s) * theta_ab[static_cast<Eigen::Index>(s)];
    return x;
}

/// 2x2 Fisher information of the target position at every receive AP.
struct FimResult {
    std::vector<Eigen::Matrix2d> fim;
    std::vector<double> crlb_trace;
    std::vector<bool> singular;
    double total = 0.0;

    bool any_singular() const {
        for (bool s : singular)
            if (s) return true;
        return false;
    }
};

/// tr(F^{-1}) of a 2x2 FIM via (F11 + F22) / det(F); +inf when F is singular
/// (det <= 1e-12 * F11 * F22 or non-positive diagonal).
inline double crlb_trace_2x2(const Eigen::Matrix2d& F, bool* singular = nullptr) {
    const double num = F(0, 0) + F(1, 1);
    const double det = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
    const bool bad = !(F(0, 0) > 0.0) || !(F(1, 1) > 0.0) || !(det > 1e-12 * F(0, 0) * F(1, 1));
    if (singular) *singular = bad;
    return bad ? std::numeric_limits<double>::infinity() : num / det;
}

/// Sum over receivers of tr(F_b^{-1}); +inf if any F_b is singular.
inline double crlb_total(std::span<const Eigen::Matrix2d> fims) {
    double total = 0.0;
    for (const auto& F : fims) total += crlb_trace_2x2(F);
    return total;
}

inline double crlb_total(const FimResult& r) { return crlb_total(std::span<const Eigen::Matrix2d>(r.fim)); }

/// Derivatives of the noiseless echo with respect to the target position,
/// one N_r-vector per (a, b, s, coordinate). Everything that does not depend on
/// the TS phasor is computed once, so the FIM and its gradient with respect to
/// the phasor are cheap to re-evaluate.
class SensingDerivatives {
public:
    SensingDerivatives(const Scenario& scn, const MaLayout& layout, const BeamformingSet& beams)
        : A_(scn.A()), B_(scn.B()), S_(scn.S()), noise_(scn.sensing_noise()) {
        if (beams.num_aps != A_ || beams.num_users != scn.K()) throw std::invalid_argument("beams do not match scenario");
        v_.resize(A_ * B_ * S_ * 2);
        const auto& geo = scn.geometry;
        for (std::size_t b = 0; b < B_; ++b)
            for (std::size_t a = 0; a < A_; ++a) {
                const auto& link = geo.link(a, b);
                const auto dd = angle_delay_derivs(geo.target, geo.tx_ap_pos[a], geo.rx_ap_pos[b]);
                const auto sd = steering_position_derivs(layout, geo, a, b);
                const VecXc gb = steering_rx(layout.rx[b], link.phi_b);
                const VecXc ga = steering_tx(layout.tx[a], link.phi_a);
                const double dtau[2] = {dd.dtau_dx, dd.dtau_dy};
                const VecXc* dgb[2] = {&sd.drx_dx, &sd.drx_dy};
                const VecXc* dga[2] = {&sd.dtx_dx, &sd.dtx_dy};
                for (std::size_t s = 0; s < S_; ++s) {
                    const double f = scn.config.freq_grid[s];
                    const cplx gamma = scn.beta_of(a, b) * std::polar(1.0, -kTwoPi * f * link.tau_ab);
                    const VecXc x = precoded_symbol(beams, scn.symbols, a, s);
                    const cplx ga_x = ga.dot(x);
                    for (int i = 0; i < 2; ++i) {
                        const cplx dga_x = dga[i]->dot(x);
                        v_[slot(a, b, s, i)] =
                            gamma * ((-kJ * kTwoPi * f * dtau[i] * ga_x) * gb + ga_x * (*dgb[i]) + dga_x * gb);
                    }
                }
            }
    }

    std::size_t A() const { return A_; }
    std::size_t B() const { return B_; }
    std::size_t S() const { return S_; }
    double noise() const { return noise_; }

    const VecXc& derivative(std::size_t a, std::size_t b, std::size_t s, int coord) const { return v_[slot(a, b, s, coord)]; }

    FimResult fim(const PhasorVector& theta) const {
        check(theta);
        FimResult out;
        out.fim.resize(B_);
        out.crlb_trace.resize(B_);
        out.singular.resize(B_);
        std::vector<VecXc> u;
        for (std::size_t b = 0; b < B_; ++b) {
            Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
            for (std::size_t s = 0; s < S_; ++s) {
                combined(theta, b, s, u);
                F(0, 0) += u[0].squaredNorm();
                F(1, 1) += u[1].squaredNorm();
                F(0, 1) += u[0].dot(u[1]).real();
            }
            F(1, 0) = F(0, 1);
            F *= 2.0 / noise_;
            bool sing = false;
            out.fim[b] = F;
            out.crlb_trace[b] = crlb_trace_2x2(F, &sing);
            out.singular[b] = sing;
            out.total += out.crlb_trace[b];
        }
        return out;
    }

    double objective(const PhasorVector& theta) const { return fim(theta).total; }

    /// Euclidean gradient of sum_b tr(F_b^{-1}) with respect to the phasor,
    /// in the real-plane sense: entry j is dL/dRe(theta_j) + j dL/dIm(theta_j).
    VecXc gradient(const PhasorVector& theta) const {
        const FimResult r = fim(theta);
        VecXc grad = VecXc::Zero(theta.values.size());
        const double scale = 2.0 / noise_;
        std::vector<VecXc> u;
        for (std::size_t b = 0; b < B_; ++b) {
            const auto& F = r.fim[b];
            // No echo derivative at all: the receiver's term is constant.
            if (F.isZero(0.0)) continue;
            if (r.singular[b]) throw DomainError("grad_crlb_wrt_phasor: singular Fisher information");
            const double C = F(0, 0) + F(1, 1);
            const double D = F(0, 0) * F(1, 1) - F(0, 1) * F(0, 1);
            for (std::size_t s = 0; s < S_; ++s) {
                combined(theta, b, s, u);
                for (std::size_t a = 0; a < A_; ++a) {
                    const VecXc& v0 = v_[slot(a, b, s, 0)];
                    const VecXc& v1 = v_[slot(a, b, s, 1)];
                    const cplx dF00 = scale * 2.0 * v0.dot(u[0]);
                    const cplx dF11 = scale * 2.0 * v1.dot(u[1]);
                    const cplx dF01 = scale * (v0.dot(u[1]) + v1.dot(u[0]));
                    const cplx dC = dF00 + dF11;
                    const cplx dD = dF00 * F(1, 1) + F(0, 0) * dF11 - 2.0 * F(0, 1) * dF01;
                    grad[theta.index(a, b, s)] = (dC * D - C * dD) / (D * D);
                }
            }
        }
        return grad;
    }

private:
    std::size_t slot(std::size_t a, std::size_t b, std::size_t s, int coord) const {
        return (((b * A_ + a) * S_ + s) << 1) + static_cast<std::size_t>(coord);
    }

    void check(const PhasorVector& theta) const {
        if (theta.num_tx != A_ || theta.num_rx != B_ || theta.num_freq != S_)
            throw std::invalid_argument("phasor vector does not match scenario");
    }

    // u[i] = sum_a theta_{a,b,s} v_{a,b,s,i}
    void combined(const PhasorVector& theta, std::size_t b, std::size_t s, std::vector<VecXc>& u) const {
        u.assign(2, VecXc::Zero(v_[slot(0, b, s, 0)].size()));
        for (std::size_t a = 0; a < A_; ++a) {
            const cplx t = theta(a, b, s);
            u[0] += t * v_[slot(a, b, s, 0)];
            u[1] += t * v_[slot(a, b, s, 1)];
        }
    }

    std::size_t A_, B_, S_;
    double noise_;
    std::vector<VecXc> v_;
};

inline FimResult fim(const Scenario& scn, const BeamformingSet& beams, const MaLayout& layout, const PhasorVector& theta) {
    return SensingDerivatives(scn, layout, beams).fim(theta);
}

inline VecXc grad_crlb_wrt_phasor(const Scenario& scn, const BeamformingSet& beams, const MaLayout& layout,
                                  const PhasorVector& theta) {
    return SensingDerivatives(scn, layout, beams).gradient(theta);
}

}  // namespace cfisac
