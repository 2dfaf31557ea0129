// Adaptive single-atom loading: an explicit finite state machine closed
// against the Monte Carlo engine.
//
// The loop pumps the loaded atoms, postselects on at least two, then
// cycles depump / weak-repump / check until exactly one atom is coupled,
// pushes the dark ones out, and verifies with a repumped check. Every
// action is followed by a 1 ms atom check whose mean transmission drives
// the next decision.

#ifndef CAVSIM_CONTROLLER_HPP
#define CAVSIM_CONTROLLER_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cavsim/cavity.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/parallel.hpp"

namespace cavsim::control {

enum class Phase { Init, Pumping, Cycling, PostPush, Done };

enum class FailureMode { AtomLoss, EjectionError, IterationLimit };

const char* to_string(Phase phase);
const char* to_string(FailureMode mode);

struct SingleAtomWindow {
    double t_low = 0.0;   // 1-vs-2 atom threshold
    double t_high = 1.0;  // 0-vs-1 atom threshold

    // Midpoints between the model transmission levels for n = 0, 1, 2
    // at the operating point.
    static SingleAtomWindow from_config(const core::CavityConfig& cfg);
};

struct ControllerState {
    Phase phase = Phase::Init;
    sim::ActionKind last_action = sim::ActionKind::OpticalPumping;
    int iteration = 0;
    SingleAtomWindow window;
    int max_iterations = 25;
};

struct Decision {
    std::optional<sim::Action> action;  // empty means terminate
    bool terminated = false;
    bool claimed_success = false;
    std::optional<FailureMode> failure;
};

// Pure decision function over (state, measured transmission). The
// returned state has the iteration counter advanced and the phase
// updated; the caller applies the action and feeds back the next check.
std::pair<Decision, ControllerState> decide(const ControllerState& state, double measured_t);

struct TrialRecord {
    bool postselected = false;  // initial check saw >= 2 atoms
    bool success = false;
    int n_initial = 0;          // true atom count at load
    int n_final = 0;            // true atom count at termination
    int iterations_used = 0;
    double wall_time_ms = 0.0;  // exact sum of logged action durations
    std::optional<FailureMode> failure_mode;
    double initial_t = 0.0;     // postselection check mean transmission
    double final_t = 0.0;       // verification measurement after the trial
};

struct TrialResult {
    TrialRecord record;
    sim::Trace trace;
    std::vector<sim::TruthEvent> events;
    std::vector<sim::Action> action_log;
    std::vector<double> check_means;  // one per AtomCheck, in log order
};

struct ControllerConfig {
    int max_iterations = 25;
    // When unset, the window is derived from the cavity config.
    std::optional<SingleAtomWindow> window;
};

// Runs one trial from the given initial occupancy (one entry per trap).
// Success is graded against the ground-truth final occupancy; a claimed
// success with more than one atom left is an ejection error, with zero
// atoms an atom loss.
TrialResult run_trial(std::span<const int> initial_occupancy, const core::CavityConfig& cfg,
                      const sim::SimParams& params, const ControllerConfig& controller,
                      std::uint64_t seed);

enum class LoadingMode { MultiTrap, SingleTrap };

struct CampaignConfig {
    LoadingMode mode = LoadingMode::MultiTrap;
    int trials = 275;            // postselected trials to collect
    std::uint64_t seed = 1;
    int max_iterations = 25;     // 25 multi-trap, 50 single-trap
    double p_eject = 0.80;       // 0.80 multi-trap, 0.63 single-trap
    int trap_count = 4;          // multi-trap mode
    double fill_probability = 0.60;  // per-tweezer single-atom loading
    double lambda_single = 1.55;  // Poisson mean for single-trap loading
    ExecMode exec = ExecMode::OpenMP;
};

struct CampaignReport {
    int trials = 0;
    int excluded = 0;            // failed postselection
    double success_rate = 0.0;
    double success_stderr = 0.0;  // binomial
    double mean_time_to_success_ms = 0.0;
    int failures_atom_loss = 0;
    int failures_ejection = 0;
    int failures_iteration_limit = 0;
    std::vector<double> initial_t;  // postselected trials only
    std::vector<double> final_t;
};

// Seeded trials fanned out across workers, merged in trial order. Runs
// until `trials` postselected trials have been collected.
CampaignReport campaign(const CampaignConfig& config, const core::CavityConfig& cfg,
                        const sim::SimParams& params,
                        std::vector<TrialRecord>* records = nullptr);

}  // namespace cavsim::control

#endif  // CAVSIM_CONTROLLER_HPP
