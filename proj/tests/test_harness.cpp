#include "catch_amalgamated.hpp"
#include "support.hpp"

#include "cfisac/cfisac.hpp"

#include <filesystem>
#include <fstream>

using namespace cfisac;

namespace {

// Just enough training to exercise every code path quickly.
OptimizerSettings tiny_optimizer() {
    OptimizerSettings s;
    s.td3.hidden = {8, 8};
    s.td3.batch_size = 8;
    s.td3.buffer_capacity = 256;
    s.meta.outer_iters = 2;
    s.meta.inner_steps = 2;
    s.meta.collect_steps = 8;
    s.meta.adaptation_steps = 10;
    s.env.solver.max_cg_iters = 20;
    s.env.solver.refine_starts = 1;
    s.env.solver.refine_grid = 33;
    s.eval_steps = 2;
    return s;
}

ExperimentSpec power_sweep() {
    ExperimentSpec spec;
    spec.mode = Mode::sweep;
    spec.axis = SweepAxis::transmit_power;
    spec.values = {20.0, 25.0, 30.0};
    spec.seeds = {4};
    spec.optimizer = tiny_optimizer();
    return spec;
}

std::string csv_of(const std::vector<ResultRow>& rows, SweepAxis axis) {
    std::ostringstream os;
    write_results_csv(os, rows, axis);
    return os.str();
}

}  // namespace

TEST_CASE("power sweep structure", "[harness]") {
    const ExperimentSpec spec = power_sweep();
    const auto rows = run_sweep(spec);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].error.empty());
        CHECK(rows[i].axis_value == spec.values[i]);
        CHECK(rows[i].seed == 4);
        CHECK(rows[i].worst_crlb >= 0.0);
        CHECK(rows[i].nominal_crlb >= 0.0);
        CHECK(rows[i].nominal_crlb <= rows[i].worst_crlb * (1.0 + 1e-9));
    }

    SECTION("same spec, same bytes") { CHECK(csv_of(run_sweep(spec), spec.axis) == csv_of(rows, spec.axis)); }
    SECTION("multi-seed sweep concatenates single-seed sweeps") {
        ExperimentSpec two = spec;
        two.values = {20.0};
        two.seeds = {4, 9};
        ExperimentSpec a = two, b = two;
        a.seeds = {4};
        b.seeds = {9};
        auto joined = run_sweep(a);
        const auto second = run_sweep(b);
        joined.insert(joined.end(), second.begin(), second.end());
        CHECK(csv_of(run_sweep(two), two.axis) == csv_of(joined, two.axis));
    }
}

TEST_CASE("fpa baseline keeps the uniform layout", "[harness]") {
    const Scenario scn = build_scenario(desk_scenario(2));
    const auto opt = optimize(scn, Baseline::fpa, tiny_optimizer(), 2);
    const MaLayout ref = fixed_position_layout(scn.config);
    for (std::size_t a = 0; a < scn.A(); ++a) {
        CHECK(opt.decoded.layout.tx[a] == ref.tx[a]);
        const VecX& p = opt.decoded.layout.tx[a];
        CHECK_THAT(p.mean(), Catch::Matchers::WithinAbs(scn.config.ma_range_tx.mid(), 1e-12));
        for (Eigen::Index t = 1; t < p.size(); ++t)
            CHECK_THAT(p[t] - p[t - 1], Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
    CHECK(opt.decoded.layout.rx[0] == ref.rx[0]);
}

TEST_CASE("bad sweep points are reported in-row", "[harness]") {
    ExperimentSpec spec = power_sweep();
    spec.axis = SweepAxis::num_mas;
    spec.values = {2.0, 40.0};  // 40 elements do not fit in the box
    const auto rows = run_sweep(spec);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].error.empty());
    CHECK_FALSE(rows[1].error.empty());
}

TEST_CASE("experiment validation", "[harness]") {
    ExperimentSpec spec = power_sweep();
    spec.values = {30.0, 20.0};
    CHECK_THROWS_AS(run_sweep(spec), ConfigError);
    spec = power_sweep();
    spec.seeds.clear();
    CHECK_THROWS_AS(run_sweep(spec), ConfigError);
    spec = power_sweep();
    spec.axis = SweepAxis::target_distance;
    CHECK_THROWS_AS(run_sweep(spec), ConfigError);
    CHECK_THROWS_AS(baseline_from_name("sca"), ConfigError);
    CHECK(baseline_from_name("ma-metarl-ideal-ts") == Baseline::ma_metarl_ideal_ts);
    CHECK(mode_from_name("solve-worst-case") == Mode::solve_worst_case);
}

TEST_CASE("target distance study", "[harness]") {
    ExperimentSpec spec;
    spec.axis = SweepAxis::target_distance;
    spec.values = {0.0, 10.0, 25.0, 40.0};
    spec.seeds = {3};
    spec.scenario = desk_scenario();
    spec.scenario.num_rx_aps = 2;
    spec.optimizer = tiny_optimizer();
    const auto rows = run_target_distance_study(spec);
    REQUIRE(rows.size() == 8);
    // At the origin the target is equidistant from every AP on the ring.
    CHECK_THAT(rows[0].kappa, Catch::Matchers::WithinRel(rows[1].kappa, 1e-12));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].error.empty());
        CHECK(rows[i].crlb_with_ts >= rows[i].crlb_without_ts * (1.0 - 1e-9));
        if (i >= 2) CHECK(rows[i].distance > rows[i - 2].distance);
    }
    CHECK(rows[6].kappa < rows[0].kappa);  // receiver 0 is the one approached

    std::ostringstream os;
    write_distance_csv(os, rows);
    CHECK(os.str().rfind("seed,distance,receiver,kappa,crlb_with_ts,crlb_without_ts,error\r\n", 0) == 0);
}

TEST_CASE("csv formatting", "[harness]") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1e-300) == "1e-300");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");

    ResultRow r;
    r.seed = 1;
    r.axis_value = 20;
    r.error = "bad, \"really\"";
    r.seconds = 12.5;
    const std::string csv = csv_of({r}, SweepAxis::transmit_power);
    CHECK(csv == "seed,transmit_power,baseline,worst_crlb,nominal_crlb,sum_rate,violations,error\r\n"
                 "1,20,ma-metarl,0,0,0,0,\"bad, \"\"really\"\"\"\r\n");
    std::ostringstream t;
    write_timing_csv(t, {r}, SweepAxis::transmit_power);
    CHECK(t.str() == "seed,transmit_power,baseline,seconds\r\n1,20,ma-metarl,12.5\r\n");
}

TEST_CASE("spearman", "[harness]") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == 1.0);
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == -1.0);
    CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(0.8));
    // Ties get the average rank: ranks (1.5, 1.5, 3) against (1, 2, 3).
    CHECK(spearman({1, 2, 3}, {5, 5, 7}) == Catch::Approx(std::sqrt(0.75)));
    CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
    CHECK_THROWS_AS(spearman({1}, {1}), DomainError);
}

TEST_CASE("svg chart", "[harness]") {
    std::ostringstream os;
    write_svg_chart(os, "CRLB <vs> power", "P (dBm)", "CRLB", {{"ma", {20, 25, 30}, {1.0, 0.1, 0.01}}, {"bad", {1}, {-1}}});
    const std::string svg = os.str();
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("&lt;vs&gt;") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("checkpoints", "[checkpoint]") {
    Td3Config cfg;
    cfg.hidden = {7, 5};
    cfg.batch_size = 4;
    cfg.buffer_capacity = 16;
    Td3Learner L(3, 2, cfg, 11);
    ToyEnv env;
    Td3Learner toy(1, 1, cfg, 2);
    ReplayBuffer buf(16);
    std::mt19937_64 rng(3);
    run_td3(toy, env, buf, 6, rng);  // non-trivial optimizer moments
    const std::string fp = scenario_fingerprint(desk_scenario());

    SECTION("round trip is bit exact") {
        for (const Td3Learner* src : {&L, &toy}) {
            const std::string text = checkpoint_to_string(*src, fp);
            const Td3Learner back = checkpoint_from_string(text, fp);
            CHECK(back.actor.params() == src->actor.params());
            CHECK(back.critic2_target.params() == src->critic2_target.params());
            CHECK(back.actor_opt.m == src->actor_opt.m);
            CHECK(back.critic1_opt.v == src->critic1_opt.v);
            CHECK(back.critic1_opt.t == src->critic1_opt.t);
            CHECK(back.updates == src->updates);
            CHECK(back.cfg.hidden == src->cfg.hidden);
            const VecX x = VecX::LinSpaced(static_cast<Eigen::Index>(src->state_dim), -0.3, 0.7);
            CHECK(back.actor.forward(x) == src->actor.forward(x));
            Td3Learner a = back, b = *src;
            CHECK(a.rng() == b.rng());
            CHECK(checkpoint_to_string(back, fp) == text);
        }
    }
    SECTION("file round trip") {
        const auto path = std::filesystem::temp_directory_path() / "cfisac_ckpt_test.json";
        save_checkpoint(L, fp, path.string());
        CHECK(load_checkpoint(path.string(), fp).critic1.params() == L.critic1.params());
        std::filesystem::remove(path);
        CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    }
    SECTION("truncated file") {
        const std::string text = checkpoint_to_string(L, fp);
        try {
            checkpoint_from_string(text.substr(0, text.size() / 2));
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
    SECTION("version mismatch") {
        auto j = nlohmann::json::parse(checkpoint_to_string(L, fp));
        j["format_version"] = kCheckpointFormatVersion + 1;
        CHECK_THROWS_AS(checkpoint_from_string(j.dump()), CheckpointError);
    }
    SECTION("corrupt weights") {
        auto j = nlohmann::json::parse(checkpoint_to_string(L, fp));
        j["networks"]["actor"]["weights"] = "00ff";
        CHECK_THROWS_AS(checkpoint_from_string(j.dump()), CheckpointError);
        j = nlohmann::json::parse(checkpoint_to_string(L, fp));
        j["networks"].erase("critic2");
        CHECK_THROWS_AS(checkpoint_from_string(j.dump()), CheckpointError);
    }
    SECTION("other scenario warns and still loads") {
        ScenarioConfig other = desk_scenario();
        other.p_max = 2.0;
        const std::string fp2 = scenario_fingerprint(other);
        CHECK(fp2 != fp);
        std::vector<std::string> warnings;
        const Td3Learner back =
            checkpoint_from_string(checkpoint_to_string(L, fp), fp2, [&](const std::string& w) { warnings.push_back(w); });
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find(fp) != std::string::npos);
        CHECK(back.actor.forward(VecX::Zero(3)) == L.actor.forward(VecX::Zero(3)));
    }
}

TEST_CASE("toml configuration", "[config]") {
    SECTION("defaults") {
        const auto spec = experiment_from_toml_string("");
        CHECK(spec.scenario.num_tx_mas == desk_scenario().num_tx_mas);
        CHECK(spec.optimizer.td3.hidden == std::vector<std::size_t>{64, 64});
    }
    SECTION("every table") {
        const auto spec = experiment_from_toml_string(R"(
[scenario]
num_tx_mas = 3
p_max_dbm = 30
rate_floor = 0.5
ts_bounds_ns = [0.5, 0.8]
target = [1.0, -2.0]
carrier_hz = 3.0e9
[solver]
max_cg_iters = 50
[td3]
hidden = [16, 16]
batch_size = 32
[meta]
outer_iters = 7
[env]
ts_mode = "ideal"
log_reward = false
[experiment]
mode = "sweep"
axis = "rate_floor"
values = [0.5, 1, 2]
baseline = "fpa"
seeds = [1, 2, 3]
output = "out/x"
)");
        CHECK(spec.scenario.num_tx_mas == 3);
        CHECK(spec.scenario.p_max == Catch::Approx(1.0));
        CHECK(spec.scenario.rate_floor == std::vector<double>{0.5});
        CHECK(spec.scenario.ts_bounds.hi == Catch::Approx(0.8e-9));
        CHECK(spec.scenario.target.y() == -2.0);
        CHECK(spec.scenario.carrier_hz() == Catch::Approx(3.0e9));
        CHECK(spec.optimizer.env.solver.max_cg_iters == 50);
        CHECK(spec.optimizer.td3.batch_size == 32);
        CHECK(spec.optimizer.meta.outer_iters == 7);
        CHECK(spec.optimizer.env.ts_mode == TsMode::ideal);
        CHECK_FALSE(spec.optimizer.env.log_reward);
        CHECK(spec.axis == SweepAxis::rate_floor);
        CHECK(spec.values == std::vector<double>{0.5, 1.0, 2.0});
        CHECK(spec.baseline == Baseline::fpa);
        CHECK(spec.seeds == std::vector<std::uint64_t>{1, 2, 3});
        CHECK(spec.output == "out/x");
    }
    SECTION("errors") {
        CHECK_THROWS_AS(experiment_from_toml_string("[scenario]\nnum_tx_maz = 3\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[plots]\nx = 1\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[td3]\nbatch_size = \"big\"\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[td3]\nbatch_size = -1\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[scenario]\np_max = 1\np_max_dbm = 30\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[env]\nts_mode = \"sometimes\"\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_string("[scenario\n"), ConfigError);
        CHECK_THROWS_AS(experiment_from_toml_file("/nonexistent/cfg.toml"), ConfigError);
    }
}
