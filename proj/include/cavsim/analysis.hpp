// Offline and online analysis of photon-count traces: level calibration,
// per-bin atom-number classification, jump/collision change-point
// detection, and collision statistics.

#ifndef CAVSIM_ANALYSIS_HPP
#define CAVSIM_ANALYSIS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cavsim/cavity.hpp"
#include "cavsim/dynamics.hpp"

namespace cavsim::analysis {

struct TooFewPeaks : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientTrials : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Histogram {
    double lo = 0.0;
    double bin_width = 0.01;
    std::vector<std::int64_t> counts;

    void add(double value);
    double bin_center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * bin_width; }
    std::int64_t total() const;
    // Center of the highest-count bin; -1 width if empty.
    double mode_center() const;

    static Histogram with_range(double lo, double hi, double bin_width);
};

struct CalibratedLevel {
    int n_atoms = 0;
    double t_level = 1.0;
    bool extrapolated = false;  // filled from the model rather than from a peak
};

struct LevelCalibration {
    std::vector<CalibratedLevel> levels;   // ascending n_atoms, descending t_level
    std::vector<double> thresholds;        // midpoints, descending in T

    // Nearest-level classification (equivalent to thresholds).
    int classify(double t_est) const;
    // Piecewise-linear inversion of t_est to an apparent atom number;
    // extrapolates beyond the calibrated range with the end slopes.
    double apparent_n(double t_est) const;
};

// Histogram of binned t_est (0.01 bins), peak search with a minimum
// separation of half the predicted level spacing, atom numbers assigned
// by matching against the model predictions, unobserved levels filled
// from the transmission model with the config eta. Throws TooFewPeaks if fewer than two
// peaks are found.
LevelCalibration calibrate_levels(std::span<const sim::Trace> traces,
                                  const core::CavityConfig& cfg, int n_max);

// Calibration built purely from the cooperativity (all levels
// extrapolated); used when no calibration trace is available.
LevelCalibration calibration_from_config(const core::CavityConfig& cfg, int n_max);

struct ClassifiedBin {
    std::int64_t t_us = 0;
    int n_hat = 0;
};

// Sliding mean of t_est over window_bins, nearest calibrated level.
std::vector<ClassifiedBin> classify_bins(const sim::Trace& trace,
                                         const LevelCalibration& cal, int window_bins);

enum class DetectedKind { JumpUp, JumpDown, Collision, RecoveryEnd };

struct DetectedEvent {
    std::int64_t t_us = 0;
    DetectedKind kind = DetectedKind::JumpUp;
    double delta_t = 0.0;  // signed change in T across the change point
    std::optional<double> recovered_coupling;  // slow |dT| regained after a Collision
};

const char* to_string(DetectedKind kind);

struct DetectOptions {
    double noise_floor = 0.07;        // |dT| below this is shot noise
    int window_bins = 5;              // bins per side of the change-point scan
    double se_factor = 4.0;           // required |dT| in units of the pooled SE
    // A jump counts as a collision when the apparent coupling loss exceeds
    // this many atoms. Single-atom losses sit at exactly 1.0; collisions
    // of partially recooled atoms can drop as little as ~1.2.
    double collision_apparent_atoms = 1.1;
    double recovery_plateau_window_ms = 2.0;
};

// Two-sided change-point scan comparing adjacent sliding windows; emits
// events where |mean difference| exceeds both the noise floor and
// se_factor x the pooled standard error. Collisions are jumps up in T
// whose apparent coupling loss exceeds one atom; each collision's
// subsequent slow recovery is tracked until it plateaus.
std::vector<DetectedEvent> detect_events(const sim::Trace& trace,
                                         const LevelCalibration& cal,
                                         const DetectOptions& opts = {});

struct OutcomeFractions {
    double both_lost = 0.0;
    double one_lost = 0.0;
    double both_heated = 0.0;
};

struct CollisionStats {
    int trials = 0;
    std::int64_t collisions_detected = 0;
    Histogram time_histogram;          // detected collision times (ms)
    double fast_fraction = 0.0;        // detected within the first 100 us
    double slow_tau_fit_ms = 0.0;      // censored-MLE exponential tail fit
    double collisions_per_trial_mean = 0.0;
    Histogram recovery_histogram;      // recovered |dT| above the noise floor
    double recovery_fraction = 0.0;    // collisions followed by any recovery
    std::optional<OutcomeFractions> truth_outcomes;  // when truth logs given
};

struct CollisionStatsOptions {
    double fast_window_us = 100.0;
    double tail_fit_start_ms = 2.0;
    double tail_fit_end_ms = 20.0;  // re-collisions of recooling pairs fatten later times
    double noise_floor = 0.07;      // histogram exclusion
    double recovery_min = 0.04;     // "followed by any recovery": ~2 sigma of the measure
    int min_trials = 100;
};

// Aggregates detected events across trials. Throws InsufficientTrials
// when fewer than min_trials trials are supplied. steady_state marks
// trials that ended with at most one atom; when given, the
// collisions-per-trial mean is taken over those trials only (collisions
// before the trap settles), matching the statistic's definition.
CollisionStats collision_statistics(std::span<const std::vector<DetectedEvent>> per_trial,
                                    double trial_duration_ms,
                                    std::span<const std::vector<sim::TruthEvent>> truth = {},
                                    const CollisionStatsOptions& opts = {},
                                    std::span<const std::uint8_t> steady_state = {});

// Convenience for the caller: did this trace end settled at <= 1 atom?
bool trace_reached_steady_state(const sim::Trace& trace, const LevelCalibration& cal,
                                double tail_ms = 2.0);

}  // namespace cavsim::analysis

#endif  // CAVSIM_ANALYSIS_HPP
