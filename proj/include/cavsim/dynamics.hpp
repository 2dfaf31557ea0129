// Seeded discrete-time Monte Carlo engine.
//
// Produces photon-count traces and a ground-truth event log for ensembles
// of trapped atoms under optical pumping, hyperfine jumps, light-assisted
// pair collisions, recooling, and background loss. A fixed seed gives a
// bit-identical trace and event list.

#ifndef CAVSIM_DYNAMICS_HPP
#define CAVSIM_DYNAMICS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cavsim/cavity.hpp"
#include "cavsim/rng.hpp"

namespace cavsim::sim {

enum class Manifold { F3, F4 };

// Only atoms in F4 couple to the cavity. coupling is a scalar proxy for
// how cold/centered the atom is; 1 is a cold atom in the stretched state
// at the mode center. It is ignored while the atom is in F3 or absent.
//
// hot separates the cause of a coupling deficit: freshly loaded atoms are
// merely unpumped (optical pumping restores them on the fast pump time),
// while collision- or push-heated atoms are thermally displaced and only
// recover by cavity cooling on the slow recool time.
struct AtomRecord {
    bool present = true;
    Manifold manifold = Manifold::F4;
    double coupling = 1.0;
    bool hot = false;
};

struct SimParams {
    double pump_tau_ms = 1.1;            // optical-pumping coupling ramp
    double pump_window_ms = 5.0;         // pumping active from t=0 for this long
    double initial_coupling = 0.5;       // coupling at load, before pumping
    double collision_fast_fraction = 0.20;
    double collision_fast_tau_us = 55.0;
    double collision_slow_tau_ms = 9.0;
    // Collisions need an encounter: two freshly loaded atoms take about a
    // trap oscillation to meet, so the hazard clock starts this late.
    double collision_onset_us = 30.0;
    double p_both_lost = 0.50;
    double p_one_lost = 0.15;
    double p_both_heated = 0.35;
    double heated_coupling = 0.3;        // coupling right after a heating collision
    double recool_tau_ms = 5.0;          // coupling recovery under cavity cooling
    double loss_tau_ms_cooling = 100.0;  // background trap lifetime, Delta > 0
    double loss_tau_ms_heating = 10.0;   // background trap lifetime, Delta < 0
    double repump_rate_per_ms = 0.6;     // weak repump F3->F4 (~45% per 1 ms pulse)
    double depump_rate_per_ms = 20.0;    // depump F4->F3 while depump light on
    double tick_us = 10.0;

    // Continuous light flags for free-running simulate(); pulsed actions
    // control light themselves.
    bool repump_light_on = false;
    bool depump_light_on = false;

    bool collisions_on = true;
    bool background_loss_on = true;

    // Pulsed-protocol knobs (used by apply_action only). Brief probe
    // pulses at Delta < 0 deposit energy far below the boil-out threshold
    // that sets the continuous-probing lifetime, so the effective pulsed
    // heating lifetime is much longer. Light-assisted collisions are
    // likewise suppressed when most co-trapped atoms sit dark in F3 and
    // the probe is only pulsed on for checks.
    double pulsed_heating_loss_tau_ms = 500.0;
    double pulsed_collision_scale = 0.008;
    // A collision- or push-heated atom sits near the trap edge; probing on
    // the heating side boils it out within a few checks.
    double hot_pulsed_loss_tau_ms = 5.0;
    double push_p_eject = 0.80;          // per-atom F3 ejection probability
    double push_p_leak = 0.50;           // failed ejection leaks the atom to F4
    double push_survivor_coupling_min = 0.25;  // failed ejection heats: U(min, 1)

    // Throws std::invalid_argument naming the offending field.
    void validate(const core::CavityConfig& cfg) const;
};

struct TraceBin {
    std::int64_t t_start_us = 0;
    std::int64_t photons = 0;
    double t_est = 0.0;  // photons / photons_per_bin_empty
};

struct Trace {
    core::CavityConfig cavity;
    SimParams params;
    std::uint64_t seed = 0;
    std::vector<TraceBin> bins;
};

enum class EventKind { JumpToF4, JumpToF3, Collision, BackgroundLoss, PushEject, PushLeak };
enum class CollisionOutcome { BothLost, OneLost, BothHeated };

struct TruthEvent {
    std::int64_t t_us = 0;
    EventKind kind = EventKind::Collision;
    std::optional<CollisionOutcome> outcome;  // set for Collision only
    int atoms_before = 0;                     // total present atoms in the ensemble
    int atoms_after = 0;
};

struct Trap {
    std::vector<AtomRecord> atoms;
};

struct TrapEnsemble {
    std::vector<Trap> traps;

    int present_count() const;
    int f4_count() const;
    double n_eff() const;  // sum of couplings over present F4 atoms

    static TrapEnsemble single(int n_atoms, double coupling, Manifold m = Manifold::F4);
    static TrapEnsemble multi(std::span<const int> per_trap, double coupling,
                              Manifold m = Manifold::F4);
};

// Protocol actions; durations are pinned to the protocol defaults.
enum class ActionKind { OpticalPumping, Depumping, WeakRepumping, PushOut, AtomCheck };

struct Action {
    ActionKind kind = ActionKind::AtomCheck;
    bool with_repumper = false;  // AtomCheck variant
    std::int64_t duration_us = 1000;

    static Action make(ActionKind kind, bool with_repumper = false);
};

const char* to_string(ActionKind kind);
const char* to_string(EventKind kind);
const char* to_string(CollisionOutcome outcome);

struct SimResult {
    Trace trace;
    std::vector<TruthEvent> events;
    TrapEnsemble final_state;
};

// Free-running simulation with the probe continuously on. Atoms start in
// F4 at params.initial_coupling and pump toward full coupling during the
// initial pumping window.
SimResult simulate(int n_initial, const core::CavityConfig& cfg, const SimParams& params,
                   double duration_ms, std::uint64_t seed);

// Same engine over several tweezers coupled to the same cavity mode.
// Collisions only occur between atoms within one trap; total n_eff is the
// sum over traps.
SimResult simulate_multi_trap(std::span<const int> n_per_trap, const core::CavityConfig& cfg,
                              const SimParams& params, double duration_ms, std::uint64_t seed);

// Applies one protocol action to the ensemble, appending the action
// window's bins (zero photons while the probe is off) and truth events.
// t_cursor_us advances by the action duration. Action windows use the
// pulsed heating lifetime and only collide pairs with an F4 member while
// probe light is on.
void apply_action(TrapEnsemble& state, const Action& action, const core::CavityConfig& cfg,
                  const SimParams& params, SimStreams& streams, std::int64_t& t_cursor_us,
                  std::vector<TraceBin>& bins, std::vector<TruthEvent>& events);

// Mean t_est over the bins of the most recent action window.
double mean_t_est(std::span<const TraceBin> bins, std::size_t from_index);

}  // namespace cavsim::sim

#endif  // CAVSIM_DYNAMICS_HPP
