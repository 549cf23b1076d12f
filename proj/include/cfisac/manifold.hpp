#pragma once

#include "cfisac/crlb.hpp"

#include <cmath>
#include <optional>
#include <ostream>

namespace cfisac {

struct ManifoldSolverConfig {
    std::size_t max_outer = 20;
    std::size_t max_cg_iters = 500;
    double grad_tol = 1e-6;
    double armijo_c1 = 1e-4;
    double armijo_shrink = 0.5;
    double armijo_init_step = 1.0;
    std::size_t armijo_max_backtracks = 50;
    double outer_tol = 1e-6;
    // Feasible refinement after the manifold loop: grid points per TS
    // coordinate scan (0 disables the stage) and the cap on full sweeps.
    std::size_t refine_grid = 129;
    std::size_t refine_sweeps = 10;
    // Extra deterministic starting points for the refinement, spread over the
    // box by a Weyl sequence; the manifold result is always the first start.
    std::size_t refine_starts = 8;
};

inline void validate(const ManifoldSolverConfig& cfg) {
    auto fail = [](const char* what) { throw ConfigError(std::string("invalid solver config: ") + what); };
    if (!(cfg.armijo_c1 > 0.0 && cfg.armijo_c1 < 1.0)) fail("0 < armijo_c1 < 1");
    if (!(cfg.armijo_shrink > 0.0 && cfg.armijo_shrink < 1.0)) fail("0 < armijo_shrink < 1");
    if (!(cfg.armijo_init_step > 0.0)) fail("armijo_init_step > 0");
    if (!(cfg.grad_tol > 0.0)) fail("grad_tol > 0");
    if (!(cfg.outer_tol > 0.0)) fail("outer_tol > 0");
    if (cfg.armijo_max_backtracks < 1) fail("armijo_max_backtracks >= 1");
    if (cfg.max_outer < 1) fail("max_outer >= 1");
    if (cfg.refine_grid == 1) fail("refine_grid is 0 or >= 2");
}

/// Real inner product Re{a^H b}, the metric of the complex circle manifold.
inline double manifold_inner(const VecXc& a, const VecXc& b) { return a.dot(b).real(); }

/// Orthogonal projection of g onto the tangent space at theta:
/// g - Re{g .* conj(theta)} .* theta.
inline VecXc project_tangent(const VecXc& theta, const VecXc& g) {
    VecXc out(g.size());
    for (Eigen::Index j = 0; j < g.size(); ++j)
        out[j] = g[j] - (g[j] * std::conj(theta[j])).real() * theta[j];
    return out;
}

/// Entrywise renormalisation of theta + step * direction.
inline VecXc retract(const VecXc& theta, const VecXc& direction, double step) {
    VecXc out(theta.size());
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        const cplx z = theta[j] + step * direction[j];
        const double m = std::abs(z);
        if (!(m > 0.0)) throw DomainError("retract: step lands on the origin");
        out[j] = z / m;
    }
    return out;
}

struct CgIterate {
    std::size_t iteration = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    double step = 0.0;
};

struct CgResult {
    VecXc theta;
    std::vector<CgIterate> trace;
    bool converged = false;  // gradient norm below tolerance
    bool stalled = false;    // two consecutive line-search failures
    std::size_t pr_resets = 0;
};

/// Riemannian conjugate-gradient ascent on the unit-modulus manifold.
/// `value(theta)` returns the objective, `egrad(theta)` its Euclidean gradient
/// (dL/dRe + j dL/dIm). Non-finite trial values are treated as rejected steps.
template <class Value, class Grad>
CgResult riemannian_cg_maximize(Value&& value, Grad&& egrad, const VecXc& theta0, const ManifoldSolverConfig& cfg) {
    validate(cfg);
    CgResult res;
    VecXc theta = theta0;
    double f = value(theta);
    VecXc g = project_tangent(theta, egrad(theta));
    VecXc d = g;
    res.trace.push_back({0, f, g.norm(), 0.0});
    std::size_t failures = 0;

    for (std::size_t it = 1; it <= cfg.max_cg_iters; ++it) {
        if (g.norm() < cfg.grad_tol) {
            res.converged = true;
            break;
        }
        double slope = manifold_inner(g, d);
        if (!(slope > 0.0)) {
            d = g;
            slope = g.squaredNorm();
            ++res.pr_resets;
        }
        double alpha = cfg.armijo_init_step / d.cwiseAbs().maxCoeff();
        bool accepted = false;
        VecXc cand;
        double fc = 0.0;
        for (std::size_t bt = 0; bt < cfg.armijo_max_backtracks; ++bt, alpha *= cfg.armijo_shrink) {
            try {
                cand = retract(theta, d, alpha);
            } catch (const DomainError&) {
                continue;
            }
            fc = value(cand);
            if (std::isfinite(fc) && fc >= f + cfg.armijo_c1 * alpha * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (++failures >= 2) {
                res.stalled = true;
                break;
            }
            d = g;
            continue;
        }
        failures = 0;
        const VecXc g_new = project_tangent(cand, egrad(cand));
        const VecXc g_moved = project_tangent(cand, g);
        const double beta = std::max(0.0, manifold_inner(g_new, g_new - g_moved) / g.squaredNorm());
        d = g_new + beta * project_tangent(cand, d);
        theta = cand;
        f = fc;
        g = g_new;
        res.trace.push_back({it, f, g.norm(), alpha});
    }
    if (!res.converged && !res.stalled && g.norm() < cfg.grad_tol) res.converged = true;
    res.theta = theta;
    return res;
}

/// Writes the iteration trace as CSV (iteration,objective,grad_norm,step).
inline void write_cg_trace_csv(std::ostream& os, const std::vector<CgIterate>& trace) {
    os << "iteration,objective,grad_norm,step\n";
    const auto old = os.precision(17);
    for (const auto& t : trace) os << t.iteration << ',' << t.objective << ',' << t.grad_norm << ',' << t.step << '\n';
    os.precision(old);
}

namespace detail {

// Least-squares cost of a TS value against unwrapped phases on one branch.
inline double ts_fit_cost(const std::vector<double>& theta, const std::vector<double>& freq, double tau, double shift) {
    double c = 0.0;
    for (std::size_t s = 0; s < theta.size(); ++s) {
        const double r = theta[s] + shift + kTwoPi * freq[s] * tau;
        c += r * r;
    }
    return c;
}

}  // namespace detail

/// Per (a, b): unwrap the phasor angles along frequency, then pick the TS value
/// in `bounds` minimising sum_s (theta_s + 2 pi m + 2 pi f_s tau)^2 over tau and
/// the integer branch m. Each branch has a clipped closed-form minimiser.
inline TsErrorMatrix recover_ts(const PhasorVector& theta, const std::vector<double>& freq_grid, const Interval& bounds) {
    const std::size_t S = theta.num_freq;
    if (freq_grid.size() != S) throw std::invalid_argument("recover_ts: frequency grid does not match phasor");
    TsErrorMatrix ts(theta.num_tx, theta.num_rx);
    double sum_f = 0.0, sum_f2 = 0.0;
    for (double f : freq_grid) {
        sum_f += f;
        sum_f2 += f * f;
    }
    std::vector<double> ang(S);
    for (std::size_t b = 0; b < theta.num_rx; ++b)
        for (std::size_t a = 0; a < theta.num_tx; ++a) {
            for (std::size_t s = 0; s < S; ++s) {
                ang[s] = std::arg(theta(a, b, s));
                if (s > 0) ang[s] -= kTwoPi * std::round((ang[s] - ang[s - 1]) / kTwoPi);
            }
            double mean_ang = 0.0;
            for (double v : ang) mean_ang += v;
            mean_ang /= static_cast<double>(S);
            const double mean_f = sum_f / static_cast<double>(S);
            // Branches that can be optimal somewhere inside the box.
            const double m_a = -(mean_ang + kTwoPi * mean_f * bounds.lo) / kTwoPi;
            const double m_b = -(mean_ang + kTwoPi * mean_f * bounds.hi) / kTwoPi;
            const auto m_lo = static_cast<long long>(std::floor(std::min(m_a, m_b))) - 1;
            const auto m_hi = static_cast<long long>(std::ceil(std::max(m_a, m_b))) + 1;
            double best_tau = bounds.lo;
            double best_cost = std::numeric_limits<double>::infinity();
            for (long long m = m_lo; m <= m_hi; ++m) {
                const double shift = kTwoPi * static_cast<double>(m);
                double sfa = 0.0;
                for (std::size_t s = 0; s < S; ++s) sfa += freq_grid[s] * (ang[s] + shift);
                const double tau = bounds.clamp(-sfa / (kTwoPi * sum_f2));
                const double cost = detail::ts_fit_cost(ang, freq_grid, tau, shift);
                if (cost < best_cost) {
                    best_cost = cost;
                    best_tau = tau;
                }
            }
            ts(a, b) = best_tau;
        }
    return ts;
}

namespace detail {

// Places tau_{a,b} at relative offset q from the other entries of column b,
// shifting the column as a whole as little as possible to stay in the box.
inline void place_relative(TsErrorMatrix& ts, Eigen::Index a, Eigen::Index b, double q, const VecX& others,
                           double m, double M, const Interval& box) {
    const double c_lo = std::max(box.lo - m, box.lo - q);
    const double c_hi = std::min(box.hi - M, box.hi - q);
    const double c = std::clamp(0.0, c_lo, std::max(c_lo, c_hi));
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < ts.tau.rows(); ++i) {
        if (i == a) continue;
        ts.tau(i, b) = box.clamp(others[j++] + c);
    }
    ts.tau(a, b) = box.clamp(q + c);
}

// k-th point of the R_d low-discrepancy sequence (additive recurrence with
// steps 1/phi_d^i, phi_d the positive root of x^(d+1) = x + 1), mapped to the box.
inline TsErrorMatrix weyl_point(std::size_t A, std::size_t B, std::size_t k, const Interval& box) {
    TsErrorMatrix ts(A, B);
    const auto d = static_cast<double>(A * B);
    double phi = 2.0;
    for (int it = 0; it < 60; ++it) phi = std::pow(1.0 + phi, 1.0 / (d + 1.0));
    double step = 1.0;
    for (Eigen::Index i = 0; i < ts.tau.size(); ++i) {
        step /= phi;
        const double frac = std::fmod(0.5 + static_cast<double>(k) * step, 1.0);
        ts.tau.data()[i] = box.lo + frac * box.width();
    }
    return ts;
}

}  // namespace detail

/// Coordinate ascent on the TS errors themselves. The CRLB depends on column b
/// of tau only through differences between its entries, so each coordinate
/// step scans the offset of tau_{a,b} relative to the rest of its column over
/// every value some feasible common shift can realise, then polishes the best
/// grid point by golden-section search between its neighbours. Only strict
/// improvements are kept, so the returned value is >= the starting one.
template <class Objective>
double refine_ts(Objective&& objective, TsErrorMatrix& ts, const Interval& bounds, std::size_t grid,
                 std::size_t max_sweeps) {
    double best = objective(ts);
    const Eigen::Index A = ts.tau.rows(), B = ts.tau.cols();
    if (grid < 2 || bounds.width() <= 0.0 || A < 2) return best;
    constexpr double inv_phi = 0.61803398874989484820;
    VecX others(A - 1);
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool improved = false;
        for (Eigen::Index b = 0; b < B; ++b)
            for (Eigen::Index a = 0; a < A; ++a) {
                const MatX start = ts.tau;
                Eigen::Index j = 0;
                for (Eigen::Index i = 0; i < A; ++i)
                    if (i != a) others[j++] = ts.tau(i, b);
                const double m = others.minCoeff(), M = others.maxCoeff();
                const double q_lo = bounds.lo - bounds.hi + M, q_hi = bounds.hi - bounds.lo + m;
                const double spacing = (q_hi - q_lo) / static_cast<double>(grid - 1);
                auto eval = [&](double q) {
                    detail::place_relative(ts, a, b, q, others, m, M, bounds);
                    return objective(ts);
                };
                double arg_q = ts.tau(a, b), val = best;
                for (std::size_t g = 0; g < grid; ++g) {
                    const double q = q_lo + spacing * static_cast<double>(g);
                    const double v = eval(q);
                    if (v > val) {
                        val = v;
                        arg_q = q;
                    }
                }
                double lo = std::max(q_lo, arg_q - spacing), hi = std::min(q_hi, arg_q + spacing);
                double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
                double f1 = eval(x1), f2 = eval(x2);
                for (int it = 0; it < 40; ++it) {
                    if (f1 > f2) {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - inv_phi * (hi - lo);
                        f1 = eval(x1);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + inv_phi * (hi - lo);
                        f2 = eval(x2);
                    }
                }
                if (f1 > val) {
                    val = f1;
                    arg_q = x1;
                }
                if (f2 > val) {
                    val = f2;
                    arg_q = x2;
                }
                ts.tau = start;
                if (val > best && std::isfinite(val)) {
                    const double v = eval(arg_q);
                    if (v > best) {
                        improved = improved || (v - best) > 1e-12 * std::abs(best);
                        best = v;
                    } else {
                        ts.tau = start;
                    }
                }
            }
        if (!improved) break;
    }
    return best;
}

struct WorstCaseResult {
    PhasorVector theta_star;      // phasor of the reported feasible TS errors
    PhasorVector theta_relaxed;   // last unconstrained manifold optimum
    TsErrorMatrix ts_star;
    double worst_crlb = 0.0;
    std::vector<double> trace;    // feasible objective after each accepted outer step
    std::vector<CgIterate> cg_trace;
    std::size_t outer_iterations = 0;
};

/// Alternates manifold ascent from the current feasible phasor with TS
/// recovery, then refines the recovered TS errors directly on the box (see
/// refine_ts). The reported point is always feasible and the outer trace never
/// decreases: an outer step that does not improve the feasible objective ends
/// the loop. The manifold stage sees the objective divided by its value at the
/// starting point, so tolerances are independent of the CRLB's units.
inline WorstCaseResult worst_case_ts(const Scenario& scn, const BeamformingSet& beams, const MaLayout& layout,
                                     const ManifoldSolverConfig& cfg,
                                     const std::optional<TsErrorMatrix>& initial = std::nullopt) {
    validate(cfg);
    const auto& freq = scn.config.freq_grid;
    const auto& bounds = scn.config.ts_bounds;
    const SensingDerivatives sd(scn, layout, beams);

    WorstCaseResult out;
    out.ts_star = initial ? *initial : TsErrorMatrix(scn.A(), scn.B(), bounds.mid());
    for (Eigen::Index i = 0; i < out.ts_star.tau.size(); ++i)
        out.ts_star.tau.data()[i] = bounds.clamp(out.ts_star.tau.data()[i]);
    out.theta_star = phasor_from_ts(out.ts_star, freq);
    out.theta_relaxed = out.theta_star;
    out.worst_crlb = sd.objective(out.theta_star);
    out.trace.push_back(out.worst_crlb);
    if (!std::isfinite(out.worst_crlb) || !(out.worst_crlb > 0.0) || bounds.width() == 0.0) return out;

    PhasorVector work = out.theta_star;
    for (std::size_t outer = 0; outer < cfg.max_outer; ++outer) {
        ++out.outer_iterations;
        const double scale = 1.0 / out.worst_crlb;
        auto value = [&](const VecXc& v) {
            work.values = v;
            return scale * sd.objective(work);
        };
        auto grad = [&](const VecXc& v) {
            work.values = v;
            return VecXc(scale * sd.gradient(work));
        };
        const CgResult cg = riemannian_cg_maximize(value, grad, out.theta_star.values, cfg);
        for (auto t : cg.trace) {
            t.objective /= scale;
            out.cg_trace.push_back(t);
        }
        out.theta_relaxed.values = cg.theta;
        const TsErrorMatrix ts_new = recover_ts(out.theta_relaxed, freq, bounds);
        const PhasorVector theta_new = phasor_from_ts(ts_new, freq);
        const double l_new = sd.objective(theta_new);
        if (!(l_new > out.worst_crlb)) break;
        const double gain = l_new - out.worst_crlb;
        out.ts_star = ts_new;
        out.theta_star = theta_new;
        out.worst_crlb = l_new;
        out.trace.push_back(l_new);
        if (gain < cfg.outer_tol * l_new) break;
    }

    if (cfg.refine_grid >= 2) {
        PhasorVector probe = out.theta_star;
        auto objective = [&](const TsErrorMatrix& ts) {
            probe = phasor_from_ts(ts, freq);
            return sd.objective(probe);
        };
        TsErrorMatrix ts = out.ts_star;
        double refined = refine_ts(objective, ts, bounds, cfg.refine_grid, cfg.refine_sweeps);
        for (std::size_t k = 1; k < cfg.refine_starts; ++k) {
            TsErrorMatrix start = detail::weyl_point(scn.A(), scn.B(), k, bounds);
            const double v = refine_ts(objective, start, bounds, cfg.refine_grid, cfg.refine_sweeps);
            if (v > refined) {
                refined = v;
                ts = start;
            }
        }
        if (refined > out.worst_crlb) {
            out.ts_star = ts;
            out.theta_star = phasor_from_ts(ts, freq);
            out.worst_crlb = sd.objective(out.theta_star);
            out.trace.push_back(out.worst_crlb);
        }
    }
    return out;
}

}  // namespace cfisac
