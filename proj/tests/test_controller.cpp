#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "cavsim/controller.hpp"
#include "test_oracle.hpp"

using namespace cavsim;

namespace {

core::CavityConfig multi_trap_config() {
    core::CavityConfig cfg;
    cfg.delta_ca_hz = -73e6;
    return cfg;
}

core::CavityConfig single_trap_config() {
    core::CavityConfig cfg;
    cfg.delta_ca_hz = -58e6;
    return cfg;
}

control::ControllerState cycling_state(const core::CavityConfig& cfg,
                                       sim::ActionKind last = sim::ActionKind::WeakRepumping) {
    control::ControllerState s;
    s.phase = control::Phase::Cycling;
    s.window = control::SingleAtomWindow::from_config(cfg);
    s.max_iterations = 25;
    s.last_action = last;
    return s;
}

}  // namespace

TEST_CASE("single-atom window sits at the level midpoints") {
    const auto cfg = multi_trap_config();
    const auto window = control::SingleAtomWindow::from_config(cfg);
    const double y = cfg.y();
    const double t0 = 1.0;
    const double t1 = test_oracle::transmission(1, 0, y, cfg.eta);
    const double t2 = test_oracle::transmission(2, 0, y, cfg.eta);
    CHECK(window.t_high == doctest::Approx(0.5 * (t0 + t1)).epsilon(1e-12));
    CHECK(window.t_low == doctest::Approx(0.5 * (t1 + t2)).epsilon(1e-12));
}

TEST_CASE("decide: cycling decision table over the full threshold grid") {
    const auto cfg = multi_trap_config();
    const auto window = control::SingleAtomWindow::from_config(cfg);
    for (double t = 0.0; t <= 1.2; t += 0.001) {
        const auto [decision, next] = control::decide(cycling_state(cfg), t);
        REQUIRE_FALSE(decision.terminated);
        REQUIRE(decision.action.has_value());
        if (t > window.t_high) {
            CHECK(decision.action->kind == sim::ActionKind::WeakRepumping);
        } else if (t >= window.t_low) {
            CHECK(decision.action->kind == sim::ActionKind::PushOut);
            CHECK(next.phase == control::Phase::PostPush);
        } else {
            CHECK(decision.action->kind == sim::ActionKind::Depumping);
        }
        CHECK(next.iteration == 1);
    }
}

TEST_CASE("decide: post-push verification outcomes") {
    const auto cfg = multi_trap_config();
    auto state = cycling_state(cfg, sim::ActionKind::PushOut);
    state.phase = control::Phase::PostPush;
    const auto window = state.window;

    // Zero-atom level: every atom gone.
    {
        const auto [decision, next] = control::decide(state, 1.0);
        CHECK(decision.terminated);
        CHECK_FALSE(decision.claimed_success);
        REQUIRE(decision.failure.has_value());
        CHECK(*decision.failure == control::FailureMode::AtomLoss);
        CHECK(next.phase == control::Phase::Done);
    }
    // Single-atom window: done.
    {
        const double mid = 0.5 * (window.t_low + window.t_high);
        const auto [decision, next] = control::decide(state, mid);
        CHECK(decision.terminated);
        CHECK(decision.claimed_success);
        CHECK(next.phase == control::Phase::Done);
    }
    // Multiple atoms detected: depump and continue.
    {
        const auto [decision, next] = control::decide(state, window.t_low - 0.1);
        CHECK_FALSE(decision.terminated);
        REQUIRE(decision.action.has_value());
        CHECK(decision.action->kind == sim::ActionKind::Depumping);
        CHECK(next.phase == control::Phase::Cycling);
    }
}

TEST_CASE("decide: iteration limit terminates regardless of the measurement") {
    const auto cfg = multi_trap_config();
    auto state = cycling_state(cfg);
    state.iteration = state.max_iterations;
    for (double t : {0.1, 0.6, 1.0}) {
        const auto [decision, next] = control::decide(state, t);
        CHECK(decision.terminated);
        REQUIRE(decision.failure.has_value());
        CHECK(*decision.failure == control::FailureMode::IterationLimit);
    }
}

TEST_CASE("decide is a pure function") {
    const auto cfg = multi_trap_config();
    const auto state = cycling_state(cfg);
    for (double t = 0.0; t <= 1.2; t += 0.01) {
        const auto a = control::decide(state, t);
        const auto b = control::decide(state, t);
        CHECK(a.first.terminated == b.first.terminated);
        CHECK(a.first.claimed_success == b.first.claimed_success);
        CHECK(a.first.action.has_value() == b.first.action.has_value());
        if (a.first.action) CHECK(a.first.action->kind == b.first.action->kind);
        CHECK(a.second.iteration == b.second.iteration);
    }
}

TEST_CASE("trial action log is a valid decision-tree path") {
    const auto cfg = multi_trap_config();
    sim::SimParams params;
    const control::ControllerConfig controller{25, {}};
    const auto window = control::SingleAtomWindow::from_config(cfg);

    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::vector<int> occupancy = {1, 1, 1, 0};
        const auto result = run_trial(occupancy, cfg, params, controller, trial_seed(7000, seed));
        const auto& log = result.action_log;
        REQUIRE(log.size() >= 2);
        CHECK(log[0].kind == sim::ActionKind::OpticalPumping);
        REQUIRE(log[1].kind == sim::ActionKind::AtomCheck);
        CHECK_FALSE(log[1].with_repumper);

        std::size_t check_index = 0;
        for (std::size_t i = 0; i < log.size(); ++i) {
            if (log[i].kind == sim::ActionKind::AtomCheck) {
                ++check_index;
                continue;
            }
            // Every applied action is followed by a measurement.
            REQUIRE(i + 1 < log.size());
            CHECK(log[i + 1].kind == sim::ActionKind::AtomCheck);
            // Push-out checks use the repumper; all others do not.
            CHECK(log[i + 1].with_repumper == (log[i].kind == sim::ActionKind::PushOut));
            if (log[i].kind == sim::ActionKind::PushOut && i > 0) {
                // The preceding check must have read a single atom.
                const double before = result.check_means[check_index - 1];
                CHECK(before >= window.t_low);
                CHECK(before <= window.t_high);
            }
        }
        // A successful trial ends on a with-repumper check.
        if (result.record.success) {
            CHECK(log.back().kind == sim::ActionKind::AtomCheck);
            CHECK(log.back().with_repumper);
        }
        // Wall time is exactly the sum of logged durations.
        double expected_ms = 0.0;
        for (const auto& action : log) {
            expected_ms += static_cast<double>(action.duration_us) * 1e-3;
        }
        CHECK(result.record.wall_time_ms == doctest::Approx(expected_ms).epsilon(1e-12));
    }
}

TEST_CASE("ideal operations never fail") {
    sim::SimParams params;
    params.background_loss_on = false;
    params.push_p_eject = 1.0;
    const control::ControllerConfig controller{50, {}};

    // Multi-trap: one atom per tweezer, no pairs.
    {
        const auto cfg = multi_trap_config();
        const std::vector<int> occupancy = {1, 1, 1, 0};
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto result =
                run_trial(occupancy, cfg, params, controller, trial_seed(8000, seed));
            REQUIRE(result.record.postselected);
            CHECK(result.record.success);
        }
    }
    // Single trap without collisional loss.
    {
        const auto cfg = single_trap_config();
        auto single_params = params;
        single_params.collisions_on = false;
        const std::vector<int> occupancy = {3};
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto result =
                run_trial(occupancy, cfg, single_params, controller, trial_seed(8100, seed));
            REQUIRE(result.record.postselected);
            CHECK(result.record.success);
        }
    }
}

TEST_CASE("success rate is monotone in the ejection efficiency (common random numbers)") {
    const auto cfg = multi_trap_config();
    sim::SimParams params;
    control::CampaignConfig config;
    config.mode = control::LoadingMode::MultiTrap;
    config.trials = 600;
    config.seed = 515151;
    config.exec = ExecMode::OpenMP;

    double previous = -1.0;
    for (double p_eject : {0.5, 0.63, 0.8, 0.98}) {
        config.p_eject = p_eject;
        const auto report = control::campaign(config, cfg, params);
        CHECK(report.success_rate >= previous);
        previous = report.success_rate;
    }
}

TEST_CASE("postselection excludes one-atom loads; empty aggregates are flagged") {
    const auto cfg = multi_trap_config();
    sim::SimParams params;
    const control::ControllerConfig controller{25, {}};
    const std::vector<int> occupancy = {1};
    const auto result = run_trial(occupancy, cfg, params, controller, 99);
    CHECK_FALSE(result.record.postselected);
    CHECK_FALSE(result.record.success);

    // A campaign that can never postselect returns an empty, flagged
    // aggregate instead of spinning.
    control::CampaignConfig config;
    config.mode = control::LoadingMode::MultiTrap;
    config.trials = 5;
    config.seed = 1;
    config.trap_count = 1;  // at most one atom: postselection always fails
    config.exec = ExecMode::Serial;
    const auto report = control::campaign(config, cfg, params);
    CHECK(report.trials == 0);
    CHECK(report.excluded > 0);
    CHECK(report.success_rate == 0.0);
}

TEST_CASE("trial records carry consistent bookkeeping") {
    const auto cfg = multi_trap_config();
    sim::SimParams params;
    const control::ControllerConfig controller{25, {}};
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::vector<int> occupancy = {1, 1, 1, 1};
        const auto result = run_trial(occupancy, cfg, params, controller, trial_seed(8200, seed));
        const auto& rec = result.record;
        CHECK(rec.n_initial == 4);
        CHECK(rec.failure_mode.has_value() == (!rec.success && rec.postselected));
        if (rec.success) CHECK(rec.n_final == 1);
        CHECK(rec.iterations_used <= 25);
        CHECK(rec.wall_time_ms > 0.0);
    }
}
