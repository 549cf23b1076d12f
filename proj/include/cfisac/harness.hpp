#pragma once

#include "cfisac/metarl.hpp"

#include <charconv>
#include <chrono>
#include <map>
#include <sstream>

namespace cfisac {

enum class Baseline { ma_metarl, ma_metarl_ideal_ts, fpa };
enum class SweepAxis { transmit_power, num_mas, rate_floor, target_distance };
enum class Mode { solve_worst_case, train, adapt, eval, sweep };

inline const char* baseline_name(Baseline b) {
    switch (b) {
        case Baseline::ma_metarl_ideal_ts: return "ma-metarl-ideal-ts";
        case Baseline::fpa: return "fpa";
        default: return "ma-metarl";
    }
}

inline Baseline baseline_from_name(const std::string& s) {
    if (s == "ma-metarl") return Baseline::ma_metarl;
    if (s == "ma-metarl-ideal-ts") return Baseline::ma_metarl_ideal_ts;
    if (s == "fpa") return Baseline::fpa;
    throw ConfigError("unknown baseline '" + s + "' (expected ma-metarl, ma-metarl-ideal-ts or fpa)");
}

inline const char* axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::num_mas: return "num_mas";
        case SweepAxis::rate_floor: return "rate_floor";
        case SweepAxis::target_distance: return "target_distance";
        default: return "transmit_power";
    }
}

inline SweepAxis axis_from_name(const std::string& s) {
    if (s == "transmit_power") return SweepAxis::transmit_power;
    if (s == "num_mas") return SweepAxis::num_mas;
    if (s == "rate_floor") return SweepAxis::rate_floor;
    if (s == "target_distance") return SweepAxis::target_distance;
    throw ConfigError("unknown sweep axis '" + s + "'");
}

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::solve_worst_case: return "solve-worst-case";
        case Mode::train: return "train";
        case Mode::adapt: return "adapt";
        case Mode::eval: return "eval";
        default: return "sweep";
    }
}

inline Mode mode_from_name(const std::string& s) {
    for (Mode m : {Mode::solve_worst_case, Mode::train, Mode::adapt, Mode::eval, Mode::sweep})
        if (s == mode_name(m)) return m;
    throw ConfigError("unknown mode '" + s + "'");
}

/// Small instance used by the tests, the acceptance run and configs/desk.toml.
inline ScenarioConfig desk_scenario(std::uint64_t seed = 7) {
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

/// Everything the learning-based optimizer needs besides the scenario.
struct OptimizerSettings {
    Td3Config td3 = [] {
        Td3Config c;
        c.hidden = {64, 64};
        c.batch_size = 64;
        c.buffer_capacity = 20000;
        return c;
    }();
    MetaConfig meta{};
    EnvConfig env{};
    std::size_t eval_steps = 4;
};

struct ExperimentSpec {
    Mode mode = Mode::sweep;
    SweepAxis axis = SweepAxis::transmit_power;
    std::vector<double> values;
    Baseline baseline = Baseline::ma_metarl;
    std::vector<std::uint64_t> seeds{1};
    std::string output = "out";
    ScenarioConfig scenario = desk_scenario();
    OptimizerSettings optimizer{};
};

inline void validate(const ExperimentSpec& s) {
    if (s.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (s.mode == Mode::sweep) {
        if (s.values.empty()) throw ConfigError("sweep needs at least one axis value");
        for (std::size_t i = 1; i < s.values.size(); ++i)
            if (!(s.values[i] > s.values[i - 1])) throw ConfigError("axis values must be strictly increasing");
    }
    for (double v : s.values)
        if (!std::isfinite(v)) throw ConfigError("axis values must be finite");
    validate(s.scenario);
    validate(s.optimizer.td3);
    validate(s.optimizer.meta);
    validate(s.optimizer.env.solver);
    if (s.optimizer.eval_steps < 1) throw ConfigError("eval_steps must be >= 1");
}

/// Scenario config with one sweep coordinate replaced.
inline ScenarioConfig apply_axis(ScenarioConfig cfg, SweepAxis axis, double value) {
    switch (axis) {
        case SweepAxis::transmit_power: cfg.p_max = dbm_to_watt(value); break;
        case SweepAxis::num_mas:
            if (value < 1.0 || value != std::floor(value)) throw ConfigError("num_mas values must be positive integers");
            cfg.num_tx_mas = static_cast<std::size_t>(value);
            break;
        case SweepAxis::rate_floor: cfg.rate_floor = {value}; break;
        case SweepAxis::target_distance: break;
    }
    return cfg;
}

inline EnvConfig env_config_for(const OptimizerSettings& s, Baseline b) {
    EnvConfig e = s.env;
    e.gamma = s.td3.gamma;
    if (b == Baseline::ma_metarl_ideal_ts) e.ts_mode = TsMode::ideal;
    e.fixed_positions = b == Baseline::fpa;
    return e;
}

/// Seed of the user draw for meta-training task l.
inline std::uint64_t task_user_seed(std::uint64_t seed, std::size_t l) { return detail::mix_seed(seed, 1000 + l); }

struct OptimizedAction {
    VecX action;
    DecodedAction decoded;
    MetaResult meta;
    AdaptResult adapted;
};

/// Meta-trains on scenarios with resampled users, adapts to `scn` and returns
/// the best action found: the adapted policy's action, or the best action seen
/// while adapting, whichever scores higher on a full evaluation.
inline OptimizedAction optimize(const Scenario& scn, Baseline baseline, const OptimizerSettings& s, std::uint64_t seed) {
    const EnvConfig ec = env_config_for(s, baseline);
    MetaConfig mc = s.meta;
    mc.seed = detail::mix_seed(seed, 1);
    std::function<IsacEnv(std::size_t)> sampler = [&](std::size_t l) {
        return IsacEnv(with_resampled_users(scn, task_user_seed(seed, l)), ec);
    };
    OptimizedAction out;
    out.meta = meta_train(sampler, mc, s.td3);
    IsacEnv env(scn, ec);
    out.adapted = meta_adapt(out.meta, env, mc, detail::mix_seed(seed, 2));

    VecX state = env.reset();
    std::vector<VecX> candidates;
    for (std::size_t i = 0; i < s.eval_steps; ++i) {
        const VecX a = out.adapted.policy.actor.forward(state).cwiseMax(-1.0).cwiseMin(1.0);
        candidates.push_back(a);
        state = env.step(a).next_state;
    }
    if (env.best()) candidates.push_back(env.best()->first);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : candidates) {
        const double r = env.evaluation_reward(a);
        if (r > best) {
            best = r;
            out.action = a;
        }
    }
    out.decoded = decode_action(out.action, scn, ec.fixed_positions);
    return out;
}

struct ActionMetrics {
    double worst_crlb = 0.0;
    double nominal_crlb = 0.0;
    double sum_rate = 0.0;
    std::size_t violations = 0;
    TsErrorMatrix ts_star;
};

inline ActionMetrics measure(const Scenario& scn, const DecodedAction& d, const ManifoldSolverConfig& solver) {
    ActionMetrics m;
    const auto wc = worst_case_ts(scn, d.beams, d.layout, solver);
    m.worst_crlb = wc.worst_crlb;
    m.ts_star = wc.ts_star;
    m.nominal_crlb = crlb_total(fim(scn, d.beams, d.layout, phasor_from_ts(nominal_ts(scn), scn.config.freq_grid)));
    m.sum_rate = weighted_sum_rate(scn, comm_channels(scn, d.layout), d.beams).sum;
    m.violations = audit_constraints(scn, d.beams, d.layout, wc.ts_star).num_violated();
    return m;
}

struct ResultRow {
    std::uint64_t seed = 0;
    double axis_value = 0.0;
    Baseline baseline = Baseline::ma_metarl;
    double worst_crlb = 0.0;
    double nominal_crlb = 0.0;
    double sum_rate = 0.0;
    std::size_t violations = 0;
    double seconds = 0.0;
    std::string error;
};

inline ResultRow run_point(const ExperimentSpec& spec, std::uint64_t seed, double value) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultRow row;
    row.seed = seed;
    row.axis_value = value;
    row.baseline = spec.baseline;
    try {
        ScenarioConfig cfg = apply_axis(spec.scenario, spec.axis, value);
        cfg.seed = seed;
        const Scenario scn = build_scenario(cfg);
        const auto opt = optimize(scn, spec.baseline, spec.optimizer, seed);
        const auto m = measure(scn, opt.decoded, spec.optimizer.env.solver);
        row.worst_crlb = m.worst_crlb;
        row.nominal_crlb = m.nominal_crlb;
        row.sum_rate = m.sum_rate;
        row.violations = m.violations;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

/// Rows in seed-major order; a failing point records its error and the sweep
/// moves on.
inline std::vector<ResultRow> run_sweep(const ExperimentSpec& spec) {
    validate(spec);
    if (spec.axis == SweepAxis::target_distance)
        throw ConfigError("target_distance is swept by run_target_distance_study");
    std::vector<ResultRow> rows;
    for (auto seed : spec.seeds)
        for (double v : spec.values) rows.push_back(run_point(spec, seed, v));
    return rows;
}

struct DistanceRow {
    std::uint64_t seed = 0;
    double distance = 0.0;
    std::size_t receiver = 0;
    double kappa = 0.0;          // target to receiver distance
    double crlb_with_ts = 0.0;   // at the worst-case TS errors
    double crlb_without_ts = 0.0;
    std::string error;
};

/// Action used by the distance study: full-power broadside beams on the
/// uniform layout.
inline DecodedAction reference_action(const Scenario& scn) {
    VecX a = VecX::Zero(static_cast<Eigen::Index>((2 * scn.K() + 1) * scn.Nt() + scn.Nr()));
    a.head(static_cast<Eigen::Index>(scn.K() * scn.Nt())).setOnes();
    return decode_action(a, scn, true);
}

/// Moves the target from the origin toward receive AP 0 and records each
/// receiver's CRLB at the worst-case and at zero TS errors.
inline std::vector<DistanceRow> run_target_distance_study(const ExperimentSpec& spec) {
    validate(spec);
    std::vector<DistanceRow> rows;
    for (auto seed : spec.seeds) {
        ScenarioConfig cfg = spec.scenario;
        cfg.seed = seed;
        const Scenario base = build_scenario(cfg);
        const Vec2 dir = base.geometry.rx_ap_pos.front().normalized();
        for (double dist : spec.values) {
            const auto emit_error = [&](const std::string& what) {
                for (std::size_t b = 0; b < base.B(); ++b) rows.push_back({seed, dist, b, 0.0, 0.0, 0.0, what});
            };
            try {
                const Scenario scn = with_target(base, dir * dist);
                const DecodedAction d = reference_action(scn);
                const auto wc = worst_case_ts(scn, d.beams, d.layout, spec.optimizer.env.solver);
                const auto with = fim(scn, d.beams, d.layout, wc.theta_star);
                const auto without = fim(scn, d.beams, d.layout, phasor_from_ts(nominal_ts(scn), cfg.freq_grid));
                for (std::size_t b = 0; b < scn.B(); ++b)
                    rows.push_back({seed, dist, b, scn.geometry.link(0, b).kappa_b, with.crlb_trace[b],
                                    without.crlb_trace[b], ""});
            } catch (const std::exception& e) {
                emit_error(e.what());
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------- output ---

/// Shortest decimal string that reads back to the same double.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

inline void write_csv_line(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
    os << "\r\n";
}

/// Result table without wall-clock time, so identical runs give identical bytes.
inline void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows, SweepAxis axis) {
    write_csv_line(os, {"seed", axis_name(axis), "baseline", "worst_crlb", "nominal_crlb", "sum_rate", "violations", "error"});
    for (const auto& r : rows)
        write_csv_line(os, {std::to_string(r.seed), format_number(r.axis_value), baseline_name(r.baseline),
                            format_number(r.worst_crlb), format_number(r.nominal_crlb), format_number(r.sum_rate),
                            std::to_string(r.violations), r.error});
}

inline void write_timing_csv(std::ostream& os, const std::vector<ResultRow>& rows, SweepAxis axis) {
    write_csv_line(os, {"seed", axis_name(axis), "baseline", "seconds"});
    for (const auto& r : rows)
        write_csv_line(os, {std::to_string(r.seed), format_number(r.axis_value), baseline_name(r.baseline),
                            format_number(r.seconds)});
}

inline void write_distance_csv(std::ostream& os, const std::vector<DistanceRow>& rows) {
    write_csv_line(os, {"seed", "distance", "receiver", "kappa", "crlb_with_ts", "crlb_without_ts", "error"});
    for (const auto& r : rows)
        write_csv_line(os, {std::to_string(r.seed), format_number(r.distance), std::to_string(r.receiver),
                            format_number(r.kappa), format_number(r.crlb_with_ts), format_number(r.crlb_without_ts),
                            r.error});
}

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Static line chart with a log-scaled y axis (non-positive or non-finite
/// points are skipped).
inline void write_svg_chart(std::ostream& os, const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<ChartSeries>& series) {
    constexpr double W = 640, H = 420, left = 70, right = 20, top = 40, bottom = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!(s.y[i] > 0.0) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, std::log10(s.y[i]));
            y1 = std::max(y1, std::log10(s.y[i]));
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 - y0 < 1e-9) y0 -= 0.5, y1 += 0.5;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double ly) { return H - bottom - (ly - y0) / (y1 - y0) * (H - top - bottom); };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream o;
    o.precision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << esc(title) << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << esc(x_label)
      << "</text>\n";
    o << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << H / 2 << ")\">" << esc(y_label) << " (log10)</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
        o << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
          << format_number(xv) << "</text>\n";
        o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 3 << "\" text-anchor=\"end\" font-size=\"10\">"
          << yv << "</text>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* c = colors[k % 5];
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (s.y[i] > 0.0 && std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(std::log10(s.y[i])) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << W - right - 4 << "\" y=\"" << top + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
          << c << "\">" << esc(s.name) << "</text>\n";
    }
    o << "</svg>\n";
    os << o.str();
}

/// Mean worst-case CRLB per axis value over the rows without errors.
inline ChartSeries mean_series(const std::vector<ResultRow>& rows, const std::string& name) {
    std::map<double, std::pair<double, int>> acc;
    for (const auto& r : rows)
        if (r.error.empty()) {
            acc[r.axis_value].first += r.worst_crlb;
            acc[r.axis_value].second += 1;
        }
    ChartSeries s{name, {}, {}};
    for (const auto& [x, v] : acc) {
        s.x.push_back(x);
        s.y.push_back(v.first / v.second);
    }
    return s;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman needs two equal-length samples of size >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace cfisac
