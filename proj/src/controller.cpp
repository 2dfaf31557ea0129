#include "cavsim/controller.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cavsim::control {

const char* to_string(Phase phase) {
    switch (phase) {
        case Phase::Init: return "init";
        case Phase::Pumping: return "pumping";
        case Phase::Cycling: return "cycling";
        case Phase::PostPush: return "post_push";
        case Phase::Done: return "done";
    }
    return "?";
}

const char* to_string(FailureMode mode) {
    switch (mode) {
        case FailureMode::AtomLoss: return "atom_loss";
        case FailureMode::EjectionError: return "ejection_error";
        case FailureMode::IterationLimit: return "iteration_limit";
    }
    return "?";
}

SingleAtomWindow SingleAtomWindow::from_config(const core::CavityConfig& cfg) {
    const double t0 = core::transmission_at(cfg, 0.0);
    const double t1 = core::transmission_at(cfg, 1.0);
    const double t2 = core::transmission_at(cfg, 2.0);
    return {0.5 * (t1 + t2), 0.5 * (t0 + t1)};
}

std::pair<Decision, ControllerState> decide(const ControllerState& state, double measured_t) {
    ControllerState next = state;
    Decision d;

    if (state.phase == Phase::Done) {
        d.terminated = true;
        return {d, next};
    }

    if (state.iteration >= state.max_iterations) {
        d.terminated = true;
        d.failure = FailureMode::IterationLimit;
        next.phase = Phase::Done;
        return {d, next};
    }
    next.iteration = state.iteration + 1;

    const bool in_window =
        measured_t >= state.window.t_low && measured_t <= state.window.t_high;
    const bool above = measured_t > state.window.t_high;  // fewer than one coupled atom

    if (state.phase == Phase::PostPush) {
        // Check with repumper: every remaining atom is counted.
        if (above) {
            d.terminated = true;
            d.failure = FailureMode::AtomLoss;  // all atoms lost
            next.phase = Phase::Done;
        } else if (in_window) {
            d.terminated = true;
            d.claimed_success = true;
            next.phase = Phase::Done;
        } else {
            // Multiple atoms survived the push; depump and cycle again.
            d.action = sim::Action::make(sim::ActionKind::Depumping);
            next.phase = Phase::Cycling;
            next.last_action = sim::ActionKind::Depumping;
        }
        return {d, next};
    }

    // Cycling (also entered right after the init pumping check).
    if (in_window) {
        d.action = sim::Action::make(sim::ActionKind::PushOut);
        next.phase = Phase::PostPush;
        next.last_action = sim::ActionKind::PushOut;
    } else if (above) {
        d.action = sim::Action::make(sim::ActionKind::WeakRepumping);
        next.phase = Phase::Cycling;
        next.last_action = sim::ActionKind::WeakRepumping;
    } else {
        d.action = sim::Action::make(sim::ActionKind::Depumping);
        next.phase = Phase::Cycling;
        next.last_action = sim::ActionKind::Depumping;
    }
    return {d, next};
}

TrialResult run_trial(std::span<const int> initial_occupancy, const core::CavityConfig& cfg,
                      const sim::SimParams& params, const ControllerConfig& controller,
                      std::uint64_t seed) {
    params.validate(cfg);
    TrialResult result;
    result.trace.cavity = cfg;
    result.trace.params = params;
    result.trace.seed = seed;

    SimStreams streams = SimStreams::from_seed(seed);
    sim::TrapEnsemble state =
        sim::TrapEnsemble::multi(initial_occupancy, params.initial_coupling);
    result.record.n_initial = state.present_count();

    std::int64_t t_us = 0;
    auto apply = [&](const sim::Action& action) {
        result.action_log.push_back(action);
        sim::apply_action(state, action, cfg, params, streams, t_us, result.trace.bins,
                          result.events);
    };
    auto check = [&](bool with_repumper) {
        const std::size_t from = result.trace.bins.size();
        apply(sim::Action::make(sim::ActionKind::AtomCheck, with_repumper));
        const double mean = sim::mean_t_est(result.trace.bins, from);
        result.check_means.push_back(mean);
        return mean;
    };

    ControllerState cs;
    cs.phase = Phase::Pumping;
    cs.window = controller.window.value_or(SingleAtomWindow::from_config(cfg));
    cs.max_iterations = controller.max_iterations;

    // Initialization: pump into the coupled manifold, measure, postselect.
    apply(sim::Action::make(sim::ActionKind::OpticalPumping));
    const double initial_t = check(false);
    result.record.initial_t = initial_t;
    cs.last_action = sim::ActionKind::OpticalPumping;

    // Postselect on at least two atoms: transmission below the 1-vs-2
    // threshold at the end of the initial pumping.
    result.record.postselected = initial_t < cs.window.t_low;

    cs.phase = Phase::Cycling;
    double measured_t = initial_t;
    bool claimed_success = false;
    std::optional<FailureMode> claimed_failure;

    if (result.record.postselected) {
        for (;;) {
            auto [decision, next_state] = decide(cs, measured_t);
            cs = next_state;
            if (decision.terminated) {
                claimed_success = decision.claimed_success;
                claimed_failure = decision.failure;
                break;
            }
            apply(*decision.action);
            measured_t = check(decision.action->kind == sim::ActionKind::PushOut);
        }
    }

    result.record.iterations_used = cs.iteration;
    result.record.n_final = state.present_count();

    // Grade against ground truth: a claimed success must actually leave
    // exactly one atom.
    if (result.record.postselected) {
        if (claimed_success) {
            if (result.record.n_final == 1) {
                result.record.success = true;
            } else if (result.record.n_final == 0) {
                result.record.failure_mode = FailureMode::AtomLoss;
            } else {
                result.record.failure_mode = FailureMode::EjectionError;
            }
        } else {
            result.record.failure_mode = claimed_failure;
        }
    }

    // Verification measurement of the settled final state (atoms recooled
    // to full coupling, all manifolds counted).
    {
        const double t_true = core::transmission_at(
            cfg, static_cast<double>(result.record.n_final));
        const auto bins = static_cast<int>(std::llround(1000.0 / cfg.bin_us));
        double sum = 0.0;
        for (int i = 0; i < bins; ++i) {
            sum += static_cast<double>(
                       streams.measure.poisson(cfg.photons_per_bin_empty * t_true)) /
                   cfg.photons_per_bin_empty;
        }
        result.record.final_t = sum / std::max(bins, 1);
    }

    double wall_ms = 0.0;
    for (const auto& a : result.action_log) wall_ms += static_cast<double>(a.duration_us) * 1e-3;
    result.record.wall_time_ms = wall_ms;
    return result;
}

namespace {

std::vector<int> draw_occupancy(const CampaignConfig& config, RandomStream& stream) {
    if (config.mode == LoadingMode::MultiTrap) {
        std::vector<int> occ(static_cast<std::size_t>(config.trap_count), 0);
        for (auto& o : occ) o = stream.bernoulli(config.fill_probability) ? 1 : 0;
        return occ;
    }
    auto n = stream.poisson(config.lambda_single);
    n = std::min<std::int64_t>(n, 16);
    return {static_cast<int>(n)};
}

}  // namespace

CampaignReport campaign(const CampaignConfig& config, const core::CavityConfig& cfg,
                        const sim::SimParams& params, std::vector<TrialRecord>* records) {
    if (config.trials < 1) throw std::invalid_argument("campaign: trials must be >= 1");
    sim::SimParams trial_params = params;
    trial_params.push_p_eject = config.p_eject;
    trial_params.validate(cfg);

    ControllerConfig controller;
    controller.max_iterations = config.max_iterations;

    CampaignReport report;
    std::vector<TrialRecord> postselected;
    postselected.reserve(static_cast<std::size_t>(config.trials));

    std::uint64_t next_index = 0;
    // Hard cap so a config whose postselection never passes still returns
    // (with fewer trials than requested).
    const std::uint64_t max_raw_trials =
        static_cast<std::uint64_t>(config.trials) * 200 + 10000;
    while (postselected.size() < static_cast<std::size_t>(config.trials) &&
           next_index < max_raw_trials) {
        const std::size_t want =
            static_cast<std::size_t>(config.trials) - postselected.size();
        // Batch enough raw trials to cover the postselection rate.
        const std::size_t batch = std::max<std::size_t>(want * 3, 32);
        std::vector<TrialRecord> batch_records(batch);
        for_each_index(batch, config.exec, [&](std::size_t i) {
            const std::uint64_t seed = trial_seed(config.seed, next_index + i);
            SimStreams occupancy_streams = SimStreams::from_seed(seed);
            const auto occ = draw_occupancy(config, occupancy_streams.occupancy);
            batch_records[i] =
                run_trial(occ, cfg, trial_params, controller, seed).record;
        });
        next_index += batch;
        for (auto& rec : batch_records) {
            if (rec.postselected) {
                if (postselected.size() < static_cast<std::size_t>(config.trials)) {
                    postselected.push_back(rec);
                }
            } else {
                ++report.excluded;
            }
        }
    }

    report.trials = static_cast<int>(postselected.size());
    int successes = 0;
    double time_sum = 0.0;
    for (const auto& rec : postselected) {
        report.initial_t.push_back(rec.initial_t);
        report.final_t.push_back(rec.final_t);
        if (rec.success) {
            ++successes;
            time_sum += rec.wall_time_ms;
        } else if (rec.failure_mode) {
            switch (*rec.failure_mode) {
                case FailureMode::AtomLoss: ++report.failures_atom_loss; break;
                case FailureMode::EjectionError: ++report.failures_ejection; break;
                case FailureMode::IterationLimit: ++report.failures_iteration_limit; break;
            }
        }
    }
    const auto n = static_cast<double>(report.trials);
    report.success_rate = report.trials > 0 ? static_cast<double>(successes) / n : 0.0;
    report.success_stderr =
        report.trials > 0
            ? std::sqrt(std::max(report.success_rate * (1.0 - report.success_rate), 0.0) / n)
            : 0.0;
    report.mean_time_to_success_ms = successes > 0 ? time_sum / successes : 0.0;

    if (records) *records = std::move(postselected);
    return report;
}

}  // namespace cavsim::control
