// Command-line front end: worst-case solves, meta-training, adaptation,
// evaluation and sweeps. Exit codes: 0 success, 1 configuration error,
// 2 runtime failure. CFISAC_LOG=error|warn|info|debug sets verbosity.

#include "cfisac/checkpoint.hpp"
#include "cfisac/config_toml.hpp"
#include "cfisac/harness.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace cfisac;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::string baseline;
    std::string axis;
    std::vector<double> values;
    std::string ts_mode;
    std::string checkpoint;
};

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("cfisac");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("CFISAC_LOG");
    const std::string level = env ? env : "info";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "warn") spdlog::set_level(spdlog::level::warn);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::set_level(spdlog::level::info);
    if (env && level != "error" && level != "warn" && level != "info" && level != "debug")
        spdlog::warn("CFISAC_LOG='{}' not recognised, using info", level);
}

/// Config file first, then command-line overrides.
ExperimentSpec resolve(const Options& o, Mode mode) {
    ExperimentSpec spec = o.config.empty() ? ExperimentSpec{} : experiment_from_toml_file(o.config);
    spec.mode = mode;
    if (!o.seeds.empty()) spec.seeds = o.seeds;
    if (o.seed) spec.seeds = {*o.seed};
    if (!o.out.empty()) spec.output = o.out;
    if (!o.baseline.empty()) spec.baseline = baseline_from_name(o.baseline);
    if (!o.axis.empty()) spec.axis = axis_from_name(o.axis);
    if (!o.values.empty()) spec.values = o.values;
    if (!o.ts_mode.empty()) spec.optimizer.env.ts_mode = ts_mode_from_name(o.ts_mode);
    validate(spec);
    return spec;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

Scenario scenario_for(const ExperimentSpec& spec, std::uint64_t seed) {
    ScenarioConfig cfg = spec.scenario;
    cfg.seed = seed;
    return build_scenario(cfg);
}

void cmd_solve(const ExperimentSpec& spec, const Options& o) {
    const fs::path out = spec.output;
    auto f = open_out(out / "worst_case.csv");
    std::vector<std::string> header{"seed", "worst_crlb", "nominal_crlb", "outer_iterations"};
    const ScenarioConfig& c = spec.scenario;
    for (std::size_t a = 0; a < c.num_tx_aps; ++a)
        for (std::size_t b = 0; b < c.num_rx_aps; ++b)
            header.push_back("tau_" + std::to_string(a) + "_" + std::to_string(b));
    write_csv_line(f, header);
    for (auto seed : spec.seeds) {
        const Scenario scn = scenario_for(spec, seed);
        DecodedAction d = reference_action(scn);
        if (!o.checkpoint.empty()) {
            const Td3Learner L = load_checkpoint(o.checkpoint, scenario_fingerprint(scn.config),
                                                 [](const std::string& w) { spdlog::warn("{}", w); });
            IsacEnv env(scn, env_config_for(spec.optimizer, spec.baseline));
            d = decode_action(L.actor.forward(env.reset()).cwiseMax(-1.0).cwiseMin(1.0), scn,
                              spec.baseline == Baseline::fpa);
        }
        const auto wc = worst_case_ts(scn, d.beams, d.layout, spec.optimizer.env.solver);
        const double nominal =
            crlb_total(fim(scn, d.beams, d.layout, phasor_from_ts(nominal_ts(scn), scn.config.freq_grid)));
        std::vector<std::string> row{std::to_string(seed), format_number(wc.worst_crlb), format_number(nominal),
                                     std::to_string(wc.outer_iterations)};
        for (std::size_t a = 0; a < scn.A(); ++a)
            for (std::size_t b = 0; b < scn.B(); ++b) row.push_back(format_number(wc.ts_star(a, b)));
        write_csv_line(f, row);
        spdlog::info("seed {}: worst-case CRLB {} (nominal {})", seed, wc.worst_crlb, nominal);
    }
}

void cmd_train(const ExperimentSpec& spec) {
    const fs::path out = spec.output;
    const EnvConfig ec = env_config_for(spec.optimizer, spec.baseline);
    for (auto seed : spec.seeds) {
        const Scenario scn = scenario_for(spec, seed);
        MetaConfig mc = spec.optimizer.meta;
        mc.seed = detail::mix_seed(seed, 1);
        std::function<IsacEnv(std::size_t)> sampler = [&](std::size_t l) {
            return IsacEnv(with_resampled_users(scn, task_user_seed(seed, l)), ec);
        };
        spdlog::info("seed {}: meta-training {} outer iterations over {} tasks", seed, mc.outer_iters, mc.num_tasks);
        const auto res = meta_train(sampler, mc, spec.optimizer.td3);
        save_checkpoint(res.meta, scenario_fingerprint(scn.config), (out / ("meta_" + seed_tag(seed) + ".json")).string());
        auto f = open_out(out / ("meta_log_" + seed_tag(seed) + ".csv"));
        write_csv_line(f, {"outer", "val_critic_loss", "val_actor_loss", "mean_reward"});
        for (const auto& r : res.log)
            write_csv_line(f, {std::to_string(r.outer), format_number(r.val_critic_loss),
                               format_number(r.val_actor_loss), format_number(r.mean_reward)});
        if (!res.log.empty()) spdlog::info("seed {}: final mean learner reward {}", seed, res.log.back().mean_reward);
    }
}

std::string checkpoint_for(const Options& o, const fs::path& out, std::uint64_t seed, const char* prefix) {
    if (!o.checkpoint.empty()) return o.checkpoint;
    return (out / (std::string(prefix) + seed_tag(seed) + ".json")).string();
}

void cmd_adapt(const ExperimentSpec& spec, const Options& o) {
    const fs::path out = spec.output;
    const EnvConfig ec = env_config_for(spec.optimizer, spec.baseline);
    for (auto seed : spec.seeds) {
        const Scenario scn = scenario_for(spec, seed);
        const std::string fp = scenario_fingerprint(scn.config);
        const Td3Learner init =
            load_checkpoint(checkpoint_for(o, out, seed, "meta_"), fp, [](const std::string& w) { spdlog::warn("{}", w); });
        IsacEnv env(scn, ec);
        if (init.state_dim != env.spec().state_dim || init.action_dim != env.spec().action_dim)
            throw ConfigError("checkpoint dimensions do not match the scenario");
        const auto res = adapt(init, env, spec.optimizer.meta.adaptation_steps, spec.optimizer.meta,
                               detail::mix_seed(seed, 2));
        save_checkpoint(res.policy, fp, (out / ("adapted_" + seed_tag(seed) + ".json")).string());
        auto f = open_out(out / ("train_log_" + seed_tag(seed) + ".csv"));
        write_train_log_csv(f, res.log);
        spdlog::info("seed {}: adapted with {} updates over {} environment steps", seed, res.policy.updates,
                     res.env_steps);
    }
}

void cmd_eval(const ExperimentSpec& spec, const Options& o) {
    const fs::path out = spec.output;
    const EnvConfig ec = env_config_for(spec.optimizer, spec.baseline);
    auto f = open_out(out / "eval.csv");
    write_csv_line(f, {"seed", "baseline", "mean_reward", "worst_crlb", "nominal_crlb", "sum_rate", "violations"});
    for (auto seed : spec.seeds) {
        const Scenario scn = scenario_for(spec, seed);
        const Td3Learner L = load_checkpoint(checkpoint_for(o, out, seed, "adapted_"), scenario_fingerprint(scn.config),
                                             [](const std::string& w) { spdlog::warn("{}", w); });
        IsacEnv env(scn, ec);
        if (L.state_dim != env.spec().state_dim || L.action_dim != env.spec().action_dim)
            throw ConfigError("checkpoint dimensions do not match the scenario");
        const double mean = evaluate_policy(L.actor, env, spec.optimizer.eval_steps);
        const VecX a = L.actor.forward(env.reset()).cwiseMax(-1.0).cwiseMin(1.0);
        const auto m = measure(scn, decode_action(a, scn, ec.fixed_positions), spec.optimizer.env.solver);
        write_csv_line(f, {std::to_string(seed), baseline_name(spec.baseline), format_number(mean),
                           format_number(m.worst_crlb), format_number(m.nominal_crlb), format_number(m.sum_rate),
                           std::to_string(m.violations)});
        spdlog::info("seed {}: mean evaluation reward {}", seed, mean);
    }
}

void cmd_sweep(const ExperimentSpec& spec) {
    const fs::path out = spec.output;
    if (spec.axis == SweepAxis::target_distance) {
        const auto rows = run_target_distance_study(spec);
        auto f = open_out(out / "results.csv");
        write_distance_csv(f, rows);
        std::map<std::size_t, std::pair<ChartSeries, ChartSeries>> per_rx;
        for (std::size_t b = 0; b < spec.scenario.num_rx_aps; ++b) {
            per_rx[b].first.name = "rx " + std::to_string(b) + " with TS errors";
            per_rx[b].second.name = "rx " + std::to_string(b) + " without TS errors";
        }
        const auto seed0 = spec.seeds.front();
        for (const auto& r : rows)
            if (r.seed == seed0 && r.error.empty()) {
                per_rx[r.receiver].first.x.push_back(r.distance);
                per_rx[r.receiver].first.y.push_back(r.crlb_with_ts);
                per_rx[r.receiver].second.x.push_back(r.distance);
                per_rx[r.receiver].second.y.push_back(r.crlb_without_ts);
            }
        std::vector<ChartSeries> series;
        for (auto& [b, s] : per_rx) {
            series.push_back(s.first);
            series.push_back(s.second);
        }
        auto svg = open_out(out / "chart.svg");
        write_svg_chart(svg, "CRLB versus target distance", "distance (m)", "CRLB", series);
        std::size_t failed = 0;
        for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
        if (failed) spdlog::warn("{} rows failed; see the error column", failed);
        return;
    }
    std::vector<ResultRow> rows;
    for (auto seed : spec.seeds)
        for (double v : spec.values) {
            spdlog::info("seed {} {} = {}", seed, axis_name(spec.axis), v);
            rows.push_back(run_point(spec, seed, v));
            if (!rows.back().error.empty()) spdlog::warn("point failed: {}", rows.back().error);
            else spdlog::debug("worst-case CRLB {}", rows.back().worst_crlb);
        }
    auto f = open_out(out / "results.csv");
    write_results_csv(f, rows, spec.axis);
    auto t = open_out(out / "timing.csv");
    write_timing_csv(t, rows, spec.axis);
    auto svg = open_out(out / "chart.svg");
    write_svg_chart(svg, std::string("worst-case CRLB versus ") + axis_name(spec.axis), axis_name(spec.axis),
                    "worst-case CRLB", {mean_series(rows, baseline_name(spec.baseline))});
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "TOML experiment file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "single seed (overrides --seeds)");
    cmd->add_option("--seeds", o.seeds, "comma-separated seeds")->delimiter(',');
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--baseline", o.baseline, "ma-metarl | ma-metarl-ideal-ts | fpa");
    cmd->add_option("--axis", o.axis, "transmit_power | num_mas | rate_floor | target_distance");
    cmd->add_option("--values", o.values, "comma-separated axis values")->delimiter(',');
    cmd->add_option("--ts-mode", o.ts_mode, "full | cached | ideal");
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Movable-antenna cell-free ISAC toolkit"};
    app.require_subcommand(1);
    Options o;
    std::map<CLI::App*, Mode> modes;
    for (Mode m : {Mode::solve_worst_case, Mode::train, Mode::adapt, Mode::eval, Mode::sweep}) {
        static const std::map<Mode, const char*> help{
            {Mode::solve_worst_case, "worst-case TS errors for the reference action or a checkpoint's action"},
            {Mode::train, "meta-train a policy per seed and save meta_seed<N>.json"},
            {Mode::adapt, "adapt a meta checkpoint to the scenario and save adapted_seed<N>.json"},
            {Mode::eval, "evaluate an adapted checkpoint"},
            {Mode::sweep, "run a parameter sweep and write results.csv, timing.csv and chart.svg"}};
        CLI::App* cmd = app.add_subcommand(mode_name(m), help.at(m));
        add_common(cmd, o);
        if (m == Mode::solve_worst_case || m == Mode::adapt || m == Mode::eval)
            cmd->add_option("--checkpoint", o.checkpoint, "policy checkpoint to use")->check(CLI::ExistingFile);
        modes[cmd] = m;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    Mode mode = Mode::sweep;
    for (const auto& [cmd, m] : modes)
        if (cmd->parsed()) mode = m;
    try {
        const ExperimentSpec spec = resolve(o, mode);
        switch (mode) {
            case Mode::solve_worst_case: cmd_solve(spec, o); break;
            case Mode::train: cmd_train(spec); break;
            case Mode::adapt: cmd_adapt(spec, o); break;
            case Mode::eval: cmd_eval(spec, o); break;
            case Mode::sweep: cmd_sweep(spec); break;
        }
    } catch (const ConfigError& e) {
        spdlog::error("configuration error: {}", e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
