#include "cavsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cavsim::sim {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

}  // namespace

void SimParams::validate(const core::CavityConfig& cfg) const {
    cfg.validate();
    auto check_positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string("sim.") + name +
                                        " must be positive and finite");
        }
    };
    check_positive(pump_tau_ms, "pump_tau_ms");
    check_positive(pump_window_ms, "pump_window_ms");
    check_positive(collision_fast_tau_us, "collision_fast_tau_us");
    if (!(collision_onset_us >= 0.0) || !std::isfinite(collision_onset_us)) {
        throw std::invalid_argument("sim.collision_onset_us must be >= 0 and finite");
    }
    check_positive(collision_slow_tau_ms, "collision_slow_tau_ms");
    check_positive(recool_tau_ms, "recool_tau_ms");
    check_positive(loss_tau_ms_cooling, "loss_tau_ms_cooling");
    check_positive(loss_tau_ms_heating, "loss_tau_ms_heating");
    check_positive(pulsed_heating_loss_tau_ms, "pulsed_heating_loss_tau_ms");
    check_positive(hot_pulsed_loss_tau_ms, "hot_pulsed_loss_tau_ms");
    check_positive(depump_rate_per_ms, "depump_rate_per_ms");
    check_positive(repump_rate_per_ms, "repump_rate_per_ms");
    check_positive(tick_us, "tick_us");

    auto unit_interval = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument(std::string("sim.") + name + " must be in [0, 1]");
        }
    };
    unit_interval(collision_fast_fraction, "collision_fast_fraction");
    unit_interval(p_both_lost, "p_both_lost");
    unit_interval(p_one_lost, "p_one_lost");
    unit_interval(p_both_heated, "p_both_heated");
    unit_interval(heated_coupling, "heated_coupling");
    unit_interval(initial_coupling, "initial_coupling");
    unit_interval(push_p_eject, "push_p_eject");
    unit_interval(push_p_leak, "push_p_leak");
    unit_interval(push_survivor_coupling_min, "push_survivor_coupling_min");
    unit_interval(pulsed_collision_scale, "pulsed_collision_scale");

    const double simplex = p_both_lost + p_one_lost + p_both_heated;
    require(std::fabs(simplex - 1.0) <= 1e-9,
            "sim.p_both_lost + p_one_lost + p_both_heated must equal 1 (got " +
                std::to_string(simplex) + ")");

    const double ratio = cfg.bin_us / tick_us;
    require(std::fabs(ratio - std::round(ratio)) <= 1e-9 && ratio >= 1.0,
            "sim.tick_us must divide cavity.bin_us");
}

int TrapEnsemble::present_count() const {
    int n = 0;
    for (const auto& trap : traps)
        for (const auto& a : trap.atoms)
            if (a.present) ++n;
    return n;
}

int TrapEnsemble::f4_count() const {
    int n = 0;
    for (const auto& trap : traps)
        for (const auto& a : trap.atoms)
            if (a.present && a.manifold == Manifold::F4) ++n;
    return n;
}

double TrapEnsemble::n_eff() const {
    double sum = 0.0;
    for (const auto& trap : traps)
        for (const auto& a : trap.atoms)
            if (a.present && a.manifold == Manifold::F4) sum += a.coupling;
    return sum;
}

TrapEnsemble TrapEnsemble::single(int n_atoms, double coupling, Manifold m) {
    TrapEnsemble e;
    e.traps.resize(1);
    e.traps[0].atoms.assign(static_cast<std::size_t>(n_atoms), AtomRecord{true, m, coupling});
    return e;
}

TrapEnsemble TrapEnsemble::multi(std::span<const int> per_trap, double coupling, Manifold m) {
    TrapEnsemble e;
    e.traps.resize(per_trap.size());
    for (std::size_t i = 0; i < per_trap.size(); ++i) {
        e.traps[i].atoms.assign(static_cast<std::size_t>(per_trap[i]),
                                AtomRecord{true, m, coupling});
    }
    return e;
}

Action Action::make(ActionKind kind, bool with_repumper) {
    Action a;
    a.kind = kind;
    a.with_repumper = with_repumper;
    switch (kind) {
        case ActionKind::OpticalPumping: a.duration_us = 5000; break;
        case ActionKind::Depumping: a.duration_us = 500; break;
        case ActionKind::WeakRepumping: a.duration_us = 1000; break;
        case ActionKind::PushOut: a.duration_us = 200; break;
        case ActionKind::AtomCheck: a.duration_us = 1000; break;
    }
    return a;
}

const char* to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::OpticalPumping: return "optical_pumping";
        case ActionKind::Depumping: return "depumping";
        case ActionKind::WeakRepumping: return "weak_repumping";
        case ActionKind::PushOut: return "push_out";
        case ActionKind::AtomCheck: return "atom_check";
    }
    return "?";
}

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::JumpToF4: return "jump_to_f4";
        case EventKind::JumpToF3: return "jump_to_f3";
        case EventKind::Collision: return "collision";
        case EventKind::BackgroundLoss: return "background_loss";
        case EventKind::PushEject: return "push_eject";
        case EventKind::PushLeak: return "push_leak";
    }
    return "?";
}

const char* to_string(CollisionOutcome outcome) {
    switch (outcome) {
        case CollisionOutcome::BothLost: return "both_lost";
        case CollisionOutcome::OneLost: return "one_lost";
        case CollisionOutcome::BothHeated: return "both_heated";
    }
    return "?";
}

namespace {

// Survival function of the two-component collision-time mixture, delayed
// by the encounter onset.
double collision_survival(const SimParams& p, double t_us) {
    const double t = t_us - p.collision_onset_us;
    if (t <= 0.0) return 1.0;
    const double tau_fast = p.collision_fast_tau_us;
    const double tau_slow = p.collision_slow_tau_ms * 1000.0;
    const double w = p.collision_fast_fraction;
    return w * std::exp(-t / tau_fast) + (1.0 - w) * std::exp(-t / tau_slow);
}

// Probability of a collision within [t, t+dt] for a total pair weight
// (sum of per-pair coupling products): the integrated mixture hazard over
// the tick, exact at tick boundaries for unit weight.
double collision_tick_probability(const SimParams& p, double t_us, double dt_us,
                                  double pair_weight) {
    const double s0 = collision_survival(p, t_us);
    double ratio;
    if (s0 < 1e-280) {
        // Fast component long dead; only the slow rate remains.
        ratio = std::exp(-dt_us / (p.collision_slow_tau_ms * 1000.0));
    } else {
        ratio = collision_survival(p, t_us + dt_us) / s0;
    }
    return 1.0 - std::pow(ratio, pair_weight);
}

struct TickEnv {
    bool probe_on = true;       // photons recorded; loss, recool, collisions active
    bool pump_ramp = false;     // coupling -> 1 at the pump rate
    bool depump_on = false;
    bool repump_on = false;
    bool pair_requires_f4 = false;  // collide only pairs with an F4 member
    double heating_tau_ms = 10.0;   // effective heating-side loss lifetime
    double collision_scale = 1.0;   // pulsed-interrogation suppression
    double hot_tau_ms = 0.0;        // extra loss for hot atoms, 0 = none
};

// Advances the ensemble by whole bins. Per tick the order is fixed:
// hyperfine jumps, coupling update, collisions (per trap), background
// loss, photon accumulation. Each process draws from its own stream.
void run_window(TrapEnsemble& ens, const core::CavityConfig& cfg, const SimParams& p,
                SimStreams& st, const TickEnv& env, std::int64_t& t_us,
                std::int64_t duration_us, std::vector<TraceBin>& bins,
                std::vector<TruthEvent>& events) {
    const double dt = p.tick_us;
    const double dt_ms = dt * 1e-3;
    const auto ticks_per_bin = static_cast<std::int64_t>(std::llround(cfg.bin_us / dt));
    const auto n_bins = static_cast<std::int64_t>(duration_us / static_cast<std::int64_t>(cfg.bin_us));

    const double p_depump = env.depump_on ? -std::expm1(-p.depump_rate_per_ms * dt_ms) : 0.0;
    const double p_repump = env.repump_on ? -std::expm1(-p.repump_rate_per_ms * dt_ms) : 0.0;
    const double pump_factor = -std::expm1(-dt_ms / p.pump_tau_ms);
    const double recool_factor = -std::expm1(-dt_ms / p.recool_tau_ms);
    const bool recool_active = env.probe_on && cfg.delta_ca_hz > 0.0;
    const double loss_tau_ms =
        cfg.delta_ca_hz >= 0.0 ? p.loss_tau_ms_cooling : env.heating_tau_ms;
    const double p_loss =
        (p.background_loss_on && env.probe_on) ? -std::expm1(-dt_ms / loss_tau_ms) : 0.0;
    // Hot-atom evaporation runs with or without the probe; under cavity
    // cooling (hot_tau_ms == 0) recooling wins instead.
    const double p_loss_hot = (p.background_loss_on && env.hot_tau_ms > 0.0)
                                  ? -std::expm1(-dt_ms / env.hot_tau_ms)
                                  : p_loss;
    const double x = cfg.x();
    const double y = cfg.y();
    const double photon_rate =
        cfg.photons_per_bin_empty * (dt / cfg.bin_us);  // per tick at T = 1

    for (std::int64_t bin = 0; bin < n_bins; ++bin) {
        const std::int64_t bin_start = t_us;
        double expected_photons = 0.0;

        for (std::int64_t tick = 0; tick < ticks_per_bin; ++tick) {
            // 1. Hyperfine jumps.
            if (env.depump_on || env.repump_on) {
                for (auto& trap : ens.traps) {
                    for (auto& atom : trap.atoms) {
                        if (!atom.present) continue;
                        if (atom.manifold == Manifold::F4 && env.depump_on) {
                            if (st.jumps.bernoulli(p_depump)) {
                                atom.manifold = Manifold::F3;
                                const int n = ens.present_count();
                                events.push_back({t_us, EventKind::JumpToF3, {}, n, n});
                            }
                        } else if (atom.manifold == Manifold::F3 && env.repump_on) {
                            if (st.jumps.bernoulli(p_repump)) {
                                atom.manifold = Manifold::F4;
                                const int n = ens.present_count();
                                events.push_back({t_us, EventKind::JumpToF4, {}, n, n});
                            }
                        }
                    }
                }
            }

            // 2. Coupling drive toward 1: optical pumping acts on unpumped
            // (cold) atoms, cavity cooling on thermally heated ones.
            if (env.pump_ramp || recool_active) {
                for (auto& trap : ens.traps) {
                    for (auto& atom : trap.atoms) {
                        if (!atom.present || atom.manifold != Manifold::F4) continue;
                        if (atom.hot) {
                            if (recool_active) atom.coupling += (1.0 - atom.coupling) * recool_factor;
                        } else if (env.pump_ramp) {
                            atom.coupling += (1.0 - atom.coupling) * pump_factor;
                        } else if (recool_active) {
                            atom.coupling += (1.0 - atom.coupling) * recool_factor;
                        }
                    }
                }
            }

            // 3. Light-assisted pair collisions, per trap. Each pair's
            // hazard is weighted by the product of the two coupling
            // factors: hot, displaced atoms sample a larger volume and
            // rarely meet until recooled.
            if (p.collisions_on && env.probe_on) {
                for (auto& trap : ens.traps) {
                    std::vector<std::size_t> idx;
                    for (std::size_t i = 0; i < trap.atoms.size(); ++i) {
                        if (trap.atoms[i].present) idx.push_back(i);
                    }
                    if (idx.size() < 2) continue;
                    std::vector<std::pair<std::size_t, std::size_t>> eligible;
                    std::vector<double> weight;
                    double weight_sum = 0.0;
                    for (std::size_t a = 0; a + 1 < idx.size(); ++a) {
                        for (std::size_t b = a + 1; b < idx.size(); ++b) {
                            const auto& atom_a = trap.atoms[idx[a]];
                            const auto& atom_b = trap.atoms[idx[b]];
                            if (env.pair_requires_f4 && atom_a.manifold == Manifold::F3 &&
                                atom_b.manifold == Manifold::F3) {
                                continue;
                            }
                            eligible.emplace_back(idx[a], idx[b]);
                            const double w = atom_a.coupling * atom_b.coupling;
                            weight.push_back(w);
                            weight_sum += w;
                        }
                    }
                    if (eligible.empty() || weight_sum <= 0.0) continue;
                    const double p_col = collision_tick_probability(
                        p, static_cast<double>(t_us), dt, weight_sum * env.collision_scale);
                    if (!st.collisions.bernoulli(p_col)) continue;

                    // The colliding pair is drawn with probability
                    // proportional to its hazard weight.
                    double pick_point = st.outcomes.uniform() * weight_sum;
                    std::size_t pick = 0;
                    while (pick + 1 < eligible.size() && pick_point > weight[pick]) {
                        pick_point -= weight[pick];
                        ++pick;
                    }
                    auto [ia, ib] = eligible[pick];

                    const double u = st.outcomes.uniform();
                    const int before = ens.present_count();
                    CollisionOutcome outcome;
                    if (u < p.p_both_lost) {
                        outcome = CollisionOutcome::BothLost;
                        trap.atoms[ia].present = false;
                        trap.atoms[ib].present = false;
                    } else if (u < p.p_both_lost + p.p_one_lost) {
                        outcome = CollisionOutcome::OneLost;
                        const bool first_leaves = st.outcomes.bernoulli(0.5);
                        auto& gone = first_leaves ? trap.atoms[ia] : trap.atoms[ib];
                        auto& stays = first_leaves ? trap.atoms[ib] : trap.atoms[ia];
                        gone.present = false;
                        stays.coupling = p.heated_coupling;
                        stays.hot = true;
                    } else {
                        outcome = CollisionOutcome::BothHeated;
                        trap.atoms[ia].coupling = p.heated_coupling;
                        trap.atoms[ib].coupling = p.heated_coupling;
                        trap.atoms[ia].hot = true;
                        trap.atoms[ib].hot = true;
                    }
                    events.push_back(
                        {t_us, EventKind::Collision, outcome, before, ens.present_count()});
                }
            }

            // 4. Trap loss: probe-induced loss of coupled atoms, plus
            // evaporation of hot atoms (near trap depth, any manifold)
            // whenever nothing recools them.
            if (p_loss > 0.0 || p_loss_hot > 0.0) {
                for (auto& trap : ens.traps) {
                    for (auto& atom : trap.atoms) {
                        if (!atom.present) continue;
                        double p_atom = 0.0;
                        if (atom.hot && p_loss_hot > 0.0) {
                            p_atom = p_loss_hot;
                        } else if (atom.manifold == Manifold::F4) {
                            p_atom = p_loss;
                        }
                        if (p_atom > 0.0 && st.loss.bernoulli(p_atom)) {
                            const int before = ens.present_count();
                            atom.present = false;
                            events.push_back(
                                {t_us, EventKind::BackgroundLoss, {}, before, before - 1});
                        }
                    }
                }
            }

            // 5. Photon expectation for this tick.
            if (env.probe_on) {
                expected_photons +=
                    photon_rate * core::transmission(ens.n_eff(), x, y, cfg.eta);
            }
            t_us += static_cast<std::int64_t>(dt);
        }

        TraceBin out;
        out.t_start_us = bin_start;
        out.photons = expected_photons > 0.0 ? st.photons.poisson(expected_photons) : 0;
        out.t_est = static_cast<double>(out.photons) / cfg.photons_per_bin_empty;
        bins.push_back(out);
    }
}

SimResult run_free(TrapEnsemble ens, const core::CavityConfig& cfg, const SimParams& params,
                   double duration_ms, std::uint64_t seed) {
    params.validate(cfg);
    if (!(duration_ms > 0.0)) throw std::invalid_argument("simulate: duration_ms must be > 0");

    SimStreams streams = SimStreams::from_seed(seed);
    SimResult result;
    result.trace.cavity = cfg;
    result.trace.params = params;
    result.trace.seed = seed;

    std::int64_t t_us = 0;
    const auto total_us = static_cast<std::int64_t>(duration_ms * 1000.0);
    const auto window_us = static_cast<std::int64_t>(params.pump_window_ms * 1000.0);
    const auto bin_us = static_cast<std::int64_t>(cfg.bin_us);
    const std::int64_t pump_us = std::min((window_us / bin_us) * bin_us, total_us);

    TickEnv env;
    env.probe_on = true;
    env.depump_on = params.depump_light_on;
    env.repump_on = params.repump_light_on;
    env.pair_requires_f4 = false;
    env.heating_tau_ms = params.loss_tau_ms_heating;
    if (cfg.delta_ca_hz < 0.0) env.hot_tau_ms = params.hot_pulsed_loss_tau_ms;

    env.pump_ramp = true;
    run_window(ens, cfg, params, streams, env, t_us, pump_us, result.trace.bins,
               result.events);
    env.pump_ramp = false;
    run_window(ens, cfg, params, streams, env, t_us, total_us - pump_us, result.trace.bins,
               result.events);

    result.final_state = std::move(ens);
    return result;
}

}  // namespace

SimResult simulate(int n_initial, const core::CavityConfig& cfg, const SimParams& params,
                   double duration_ms, std::uint64_t seed) {
    require(n_initial >= 0 && n_initial <= 16, "simulate: n_initial must be in [0, 16]");
    return run_free(TrapEnsemble::single(n_initial, params.initial_coupling), cfg, params,
                    duration_ms, seed);
}

SimResult simulate_multi_trap(std::span<const int> n_per_trap, const core::CavityConfig& cfg,
                              const SimParams& params, double duration_ms,
                              std::uint64_t seed) {
    int total = 0;
    for (int n : n_per_trap) {
        require(n >= 0, "simulate_multi_trap: occupancies must be >= 0");
        total += n;
    }
    require(total <= 16, "simulate_multi_trap: at most 16 atoms");
    return run_free(TrapEnsemble::multi(n_per_trap, params.initial_coupling), cfg, params,
                    duration_ms, seed);
}

void apply_action(TrapEnsemble& state, const Action& action, const core::CavityConfig& cfg,
                  const SimParams& params, SimStreams& streams, std::int64_t& t_cursor_us,
                  std::vector<TraceBin>& bins, std::vector<TruthEvent>& events) {
    TickEnv env;
    env.pair_requires_f4 = true;
    env.heating_tau_ms = params.pulsed_heating_loss_tau_ms;
    env.collision_scale = params.pulsed_collision_scale;
    if (cfg.delta_ca_hz < 0.0) env.hot_tau_ms = params.hot_pulsed_loss_tau_ms;

    switch (action.kind) {
        case ActionKind::OpticalPumping:
            env.probe_on = true;
            env.pump_ramp = true;
            break;
        case ActionKind::Depumping:
            env.probe_on = false;
            env.depump_on = true;
            break;
        case ActionKind::WeakRepumping:
            env.probe_on = false;
            env.repump_on = true;
            break;
        case ActionKind::PushOut: {
            // State-selective ejection, instantaneous on the action scale.
            // Fixed three draws per F3 atom keep the push stream aligned
            // across parameter changes (common-random-number comparisons).
            for (auto& trap : state.traps) {
                for (auto& atom : trap.atoms) {
                    if (!atom.present || atom.manifold != Manifold::F3) continue;
                    const double u_eject = streams.push.uniform();
                    const double u_leak = streams.push.uniform();
                    const double u_heat = streams.push.uniform();
                    const int before = state.present_count();
                    if (u_eject < params.push_p_eject) {
                        atom.present = false;
                        events.push_back(
                            {t_cursor_us, EventKind::PushEject, {}, before, before - 1});
                    } else {
                        // Recoil-heated but still trapped.
                        atom.coupling = params.push_survivor_coupling_min +
                                        u_heat * (1.0 - params.push_survivor_coupling_min);
                        atom.hot = true;
                        if (u_leak < params.push_p_leak) {
                            atom.manifold = Manifold::F4;
                            events.push_back(
                                {t_cursor_us, EventKind::PushLeak, {}, before, before});
                        }
                    }
                }
            }
            env.probe_on = false;
            break;
        }
        case ActionKind::AtomCheck: {
            if (action.with_repumper) {
                // Strong repump empties F3 before the probe window.
                for (auto& trap : state.traps) {
                    for (auto& atom : trap.atoms) {
                        if (atom.present && atom.manifold == Manifold::F3) {
                            atom.manifold = Manifold::F4;
                            const int n = state.present_count();
                            events.push_back({t_cursor_us, EventKind::JumpToF4, {}, n, n});
                        }
                    }
                }
            }
            env.probe_on = true;
            break;
        }
    }

    run_window(state, cfg, params, streams, env, t_cursor_us, action.duration_us, bins,
               events);
}

double mean_t_est(std::span<const TraceBin> bins, std::size_t from_index) {
    if (from_index >= bins.size()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = from_index; i < bins.size(); ++i) sum += bins[i].t_est;
    return sum / static_cast<double>(bins.size() - from_index);
}

}  // namespace cavsim::sim
