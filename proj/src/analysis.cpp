#include "cavsim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cavsim::analysis {

void Histogram::add(double value) {
    if (counts.empty()) return;
    auto idx = static_cast<std::int64_t>(std::floor((value - lo) / bin_width));
    idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(counts.size()) - 1);
    ++counts[static_cast<std::size_t>(idx)];
}

std::int64_t Histogram::total() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
}

double Histogram::mode_center() const {
    if (counts.empty()) return lo - bin_width;
    const auto it = std::max_element(counts.begin(), counts.end());
    return bin_center(static_cast<std::size_t>(it - counts.begin()));
}

Histogram Histogram::with_range(double lo, double hi, double bin_width) {
    Histogram h;
    h.lo = lo;
    h.bin_width = bin_width;
    const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / bin_width));
    h.counts.assign(std::max<std::size_t>(n, 1), 0);
    return h;
}

int LevelCalibration::classify(double t_est) const {
    int best_n = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& level : levels) {
        const double d = std::fabs(t_est - level.t_level);
        if (d < best_dist) {
            best_dist = d;
            best_n = level.n_atoms;
        }
    }
    return best_n;
}

double LevelCalibration::apparent_n(double t_est) const {
    // levels are ascending in n, strictly descending in T.
    if (levels.size() < 2) return levels.empty() ? 0.0 : levels.front().n_atoms;
    const auto segment = [&](std::size_t i, double t) {
        const auto& a = levels[i];
        const auto& b = levels[i + 1];
        const double frac = (a.t_level - t) / (a.t_level - b.t_level);
        return static_cast<double>(a.n_atoms) +
               frac * static_cast<double>(b.n_atoms - a.n_atoms);
    };
    if (t_est >= levels.front().t_level) return segment(0, t_est);
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
        if (t_est >= levels[i + 1].t_level) return segment(i, t_est);
    }
    return segment(levels.size() - 2, t_est);
}

LevelCalibration calibrate_levels(std::span<const sim::Trace> traces,
                                  const core::CavityConfig& cfg, int n_max) {
    cfg.validate();
    if (n_max < 1 || n_max > 4) {
        throw std::invalid_argument("calibrate_levels: n_max must be in [1, 4]");
    }
    if (traces.empty()) throw std::invalid_argument("calibrate_levels: no traces");

    // Model-level predictions for peak matching and extrapolation.
    std::vector<double> predicted(static_cast<std::size_t>(n_max) + 1);
    for (int n = 0; n <= n_max; ++n) {
        predicted[static_cast<std::size_t>(n)] =
            core::transmission_at(cfg, static_cast<double>(n));
    }
    double min_gap = std::numeric_limits<double>::infinity();
    for (int n = 0; n < n_max; ++n) {
        min_gap = std::min(min_gap, predicted[n] - predicted[n + 1]);
    }

    constexpr double kBinWidth = 0.01;
    Histogram hist = Histogram::with_range(0.0, 1.3, kBinWidth);
    for (const auto& trace : traces) {
        for (const auto& bin : trace.bins) hist.add(bin.t_est);
    }

    const auto sep_cells = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::floor(0.5 * min_gap / kBinWidth)));
    const auto floor_count =
        std::max<std::int64_t>(5, hist.total() / 1000);

    // Local maxima separated by at least half the predicted level spacing.
    struct Peak {
        double t;
        std::int64_t mass;
    };
    std::vector<Peak> peaks;
    const auto cells = static_cast<std::int64_t>(hist.counts.size());
    for (std::int64_t i = 0; i < cells; ++i) {
        const auto c = hist.counts[static_cast<std::size_t>(i)];
        if (c < floor_count) continue;
        bool is_max = true;
        for (std::int64_t j = std::max<std::int64_t>(0, i - sep_cells);
             j <= std::min(cells - 1, i + sep_cells); ++j) {
            if (j == i) continue;
            const auto cj = hist.counts[static_cast<std::size_t>(j)];
            if (cj > c || (cj == c && j < i)) {
                is_max = false;
                break;
            }
        }
        if (!is_max) continue;
        // Centroid refinement over +-2 cells.
        double wsum = 0.0;
        double tsum = 0.0;
        for (std::int64_t j = std::max<std::int64_t>(0, i - 2);
             j <= std::min(cells - 1, i + 2); ++j) {
            const auto w = static_cast<double>(hist.counts[static_cast<std::size_t>(j)]);
            wsum += w;
            tsum += w * hist.bin_center(static_cast<std::size_t>(j));
        }
        peaks.push_back({tsum / wsum, c});
    }

    if (peaks.size() < 2) {
        throw TooFewPeaks("calibrate_levels: fewer than 2 peaks found (" +
                          std::to_string(peaks.size()) + ")");
    }

    // Keep at most n_max + 1 strongest peaks, then match each to the
    // nearest predicted level.
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.mass > b.mass; });
    if (peaks.size() > static_cast<std::size_t>(n_max) + 1) {
        peaks.resize(static_cast<std::size_t>(n_max) + 1);
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.t > b.t; });

    LevelCalibration cal;
    cal.levels.resize(static_cast<std::size_t>(n_max) + 1);
    std::vector<bool> assigned(static_cast<std::size_t>(n_max) + 1, false);
    for (const auto& peak : peaks) {
        int best_n = -1;
        double best_dist = std::numeric_limits<double>::infinity();
        for (int n = 0; n <= n_max; ++n) {
            if (assigned[static_cast<std::size_t>(n)]) continue;
            const double d = std::fabs(peak.t - predicted[static_cast<std::size_t>(n)]);
            if (d < best_dist) {
                best_dist = d;
                best_n = n;
            }
        }
        if (best_n < 0 || best_dist > std::max(min_gap, 0.05)) continue;
        assigned[static_cast<std::size_t>(best_n)] = true;
        cal.levels[static_cast<std::size_t>(best_n)] = {best_n, peak.t, false};
    }
    // Unobserved levels extrapolated from the measured cooperativity.
    for (int n = 0; n <= n_max; ++n) {
        if (!assigned[static_cast<std::size_t>(n)]) {
            cal.levels[static_cast<std::size_t>(n)] = {n, predicted[static_cast<std::size_t>(n)],
                                                       true};
        }
    }

    cal.thresholds.resize(static_cast<std::size_t>(n_max));
    for (int n = 0; n < n_max; ++n) {
        cal.thresholds[static_cast<std::size_t>(n)] =
            0.5 * (cal.levels[static_cast<std::size_t>(n)].t_level +
                   cal.levels[static_cast<std::size_t>(n) + 1].t_level);
    }
    return cal;
}

LevelCalibration calibration_from_config(const core::CavityConfig& cfg, int n_max) {
    cfg.validate();
    if (n_max < 1) throw std::invalid_argument("calibration_from_config: n_max must be >= 1");
    LevelCalibration cal;
    for (int n = 0; n <= n_max; ++n) {
        cal.levels.push_back({n, core::transmission_at(cfg, static_cast<double>(n)), true});
    }
    for (int n = 0; n < n_max; ++n) {
        cal.thresholds.push_back(0.5 * (cal.levels[static_cast<std::size_t>(n)].t_level +
                                        cal.levels[static_cast<std::size_t>(n) + 1].t_level));
    }
    return cal;
}

std::vector<ClassifiedBin> classify_bins(const sim::Trace& trace,
                                         const LevelCalibration& cal, int window_bins) {
    if (window_bins < 1) throw std::invalid_argument("classify_bins: window_bins must be >= 1");
    std::vector<ClassifiedBin> out;
    const auto n = trace.bins.size();
    const auto w = static_cast<std::size_t>(window_bins);
    if (n < w) return out;
    out.reserve(n - w + 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < w; ++i) sum += trace.bins[i].t_est;
    for (std::size_t i = 0;; ++i) {
        out.push_back({trace.bins[i].t_start_us, cal.classify(sum / static_cast<double>(w))});
        if (i + w >= n) break;
        sum += trace.bins[i + w].t_est - trace.bins[i].t_est;
    }
    return out;
}

const char* to_string(DetectedKind kind) {
    switch (kind) {
        case DetectedKind::JumpUp: return "jump_up";
        case DetectedKind::JumpDown: return "jump_down";
        case DetectedKind::Collision: return "collision";
        case DetectedKind::RecoveryEnd: return "recovery_end";
    }
    return "?";
}

namespace {

struct WindowStats {
    double mean_left = 0.0;
    double mean_right = 0.0;
    double diff = 0.0;
    double se = 0.0;
};

WindowStats window_stats(const std::vector<double>& t, std::size_t boundary, std::size_t w,
                         double photons_per_bin) {
    const std::size_t lo = boundary >= w ? boundary - w : 0;
    const std::size_t hi = std::min(t.size(), boundary + w);
    const auto nl = static_cast<double>(boundary - lo);
    const auto nr = static_cast<double>(hi - boundary);
    double sl = 0.0;
    double sr = 0.0;
    for (std::size_t i = lo; i < boundary; ++i) sl += t[i];
    for (std::size_t i = boundary; i < hi; ++i) sr += t[i];
    WindowStats ws;
    ws.mean_left = sl / nl;
    ws.mean_right = sr / nr;
    ws.diff = ws.mean_right - ws.mean_left;
    // Shot-noise model: var(t_est) = T / photons_per_bin for each bin.
    const double vl = std::max(ws.mean_left, 1.0 / photons_per_bin) / photons_per_bin;
    const double vr = std::max(ws.mean_right, 1.0 / photons_per_bin) / photons_per_bin;
    ws.se = std::sqrt(vl / nl + vr / nr);
    return ws;
}

}  // namespace

std::vector<DetectedEvent> detect_events(const sim::Trace& trace,
                                         const LevelCalibration& cal,
                                         const DetectOptions& opts) {
    std::vector<DetectedEvent> events;
    const auto n = trace.bins.size();
    const auto w = static_cast<std::size_t>(opts.window_bins);
    if (n < 2) return events;

    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = trace.bins[i].t_est;
    const double B = trace.cavity.photons_per_bin_empty;
    const double bin_us = trace.cavity.bin_us;

    auto passes = [&](const WindowStats& ws, std::size_t boundary) {
        // The one-bin comparison at the very start of the trace happens
        // once per trace, so it can afford a softer significance gate.
        const double se_factor = boundary == 1 ? 0.75 * opts.se_factor : opts.se_factor;
        return std::fabs(ws.diff) > opts.noise_floor &&
               std::fabs(ws.diff) > se_factor * ws.se;
    };

    struct ChangePoint {
        std::size_t boundary;
        WindowStats ws;
    };
    std::vector<ChangePoint> change_points;

    std::size_t b = 1;
    while (b < n) {
        WindowStats ws = window_stats(t, b, w, B);
        if (!passes(ws, b)) {
            ++b;
            continue;
        }
        // Local |diff| maximum over the next window: the straddled bin
        // decides which boundary wins.
        std::size_t best = b;
        WindowStats best_ws = ws;
        for (std::size_t c = b + 1; c < std::min(n, b + w); ++c) {
            WindowStats cand = window_stats(t, c, w, B);
            if (std::fabs(cand.diff) > std::fabs(best_ws.diff)) {
                best = c;
                best_ws = cand;
            }
        }
        change_points.push_back({best, best_ws});
        b = best + w;  // skip the rest of this edge
    }

    const auto plateau_bins = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::llround(opts.recovery_plateau_window_ms * 1000.0 /
                                                 bin_us)));

    // Level means for classification exclude one guard bin on each side
    // of the boundary: the bin straddling the change sits between levels
    // and would dilute the apparent atom numbers.
    auto guarded_pre = [&](std::size_t boundary) -> std::pair<double, std::size_t> {
        if (boundary < 2) return {0.0, 0};
        const std::size_t end = boundary - 1;
        const std::size_t start = end > w ? end - w : 0;
        double sum = 0.0;
        for (std::size_t i = start; i < end; ++i) sum += t[i];
        return {sum / static_cast<double>(end - start), end - start};
    };
    auto guarded_post = [&](std::size_t boundary) -> double {
        std::size_t start = boundary + 1;
        std::size_t end = std::min(n, start + w);
        if (start >= n) {
            start = boundary;
            end = std::min(n, boundary + w);
        }
        double sum = 0.0;
        for (std::size_t i = start; i < end; ++i) sum += t[i];
        return sum / static_cast<double>(end - start);
    };
    // An up-jump with no usable pre-level bins (change inside the first
    // window): accept the collision reading when some calibrated level at
    // least `threshold` atoms above the post level is consistent with the
    // straddled bin's intermediate value.
    auto early_collision_consistent = [&](std::size_t boundary, double post_mean) {
        const double v = t[boundary - 1];
        const double n_post = cal.apparent_n(post_mean);
        for (const auto& level : cal.levels) {
            if (level.t_level >= post_mean) continue;
            if (cal.apparent_n(level.t_level) - n_post <= opts.collision_apparent_atoms) {
                continue;
            }
            const double alpha = (v - post_mean) / (level.t_level - post_mean);
            if (alpha > -0.15 && alpha < 1.15) return true;
        }
        return false;
    };

    for (std::size_t ci = 0; ci < change_points.size(); ++ci) {
        const auto& cp = change_points[ci];
        DetectedEvent ev;
        ev.t_us = trace.bins[cp.boundary].t_start_us;
        ev.delta_t = cp.ws.diff;

        const auto [pre_mean, pre_bins] = guarded_pre(cp.boundary);
        const double post_mean = guarded_post(cp.boundary);
        bool collision = false;
        bool probation = false;  // near-threshold jump: decided by recovery
        if (cp.ws.diff > 0.0) {
            if (pre_bins > 0) {
                const double drop = cal.apparent_n(pre_mean) - cal.apparent_n(post_mean);
                collision = drop > opts.collision_apparent_atoms;
                // Collisions between partially recooled atoms lose less
                // than two cold atoms' coupling. A ~one-atom jump that is
                // followed by slow recooling cannot be a plain loss (cold
                // losses leave nothing behind to recool), so such jumps
                // are promoted when a recovery is measured.
                probation = !collision && drop > 0.6;
            } else {
                collision = early_collision_consistent(cp.boundary, post_mean);
            }
        }
        if (collision || probation) {
            // Track the slow T decrease (coupling recovery) until it
            // plateaus, the next change point, or the trace end.
            const std::size_t interval_end = ci + 1 < change_points.size()
                                                 ? change_points[ci + 1].boundary
                                                 : n;
            const std::size_t track_start = cp.boundary + 1;  // skip the straddle bin
            std::size_t chunk_start = track_start;
            double prev_mean = post_mean;
            double final_mean = post_mean;
            std::size_t plateau_at = interval_end;
            bool plateaued = false;
            while (chunk_start + plateau_bins <= interval_end) {
                double sum = 0.0;
                for (std::size_t i = chunk_start; i < chunk_start + plateau_bins; ++i) {
                    sum += t[i];
                }
                const double mean = sum / static_cast<double>(plateau_bins);
                const double eps =
                    2.0 * std::sqrt(2.0 * std::max(mean, 1.0 / B) /
                                    (B * static_cast<double>(plateau_bins)));
                if (chunk_start != track_start && prev_mean - mean < eps) {
                    plateaued = true;
                    plateau_at = chunk_start;
                    final_mean = mean;
                    break;
                }
                prev_mean = mean;
                final_mean = mean;
                chunk_start += plateau_bins;
            }
            if (!plateaued) {
                // Interrupted by the next change point or the trace end:
                // close with a short window at the interruption so partial
                // recoveries are still measured.
                std::size_t end = interval_end < n ? interval_end - 1 : interval_end;
                const std::size_t start = end > track_start + w ? end - w : track_start;
                if (start < end) {
                    double sum = 0.0;
                    for (std::size_t i = start; i < end; ++i) sum += t[i];
                    final_mean = sum / static_cast<double>(end - start);
                    plateau_at = end;
                }
            }
            const double recovered = std::max(0.0, post_mean - final_mean);
            if (probation && recovered <= opts.noise_floor) {
                // No recooling followed: an ordinary single-atom loss.
                ev.kind = DetectedKind::JumpUp;
                events.push_back(ev);
            } else {
                ev.kind = DetectedKind::Collision;
                ev.recovered_coupling = recovered;
                events.push_back(ev);
                if (recovered > opts.noise_floor) {
                    DetectedEvent end;
                    end.t_us = trace.bins[std::min(plateau_at, n - 1)].t_start_us;
                    end.kind = DetectedKind::RecoveryEnd;
                    end.delta_t = -recovered;
                    end.recovered_coupling = recovered;
                    events.push_back(end);
                }
            }
        } else {
            ev.kind = cp.ws.diff > 0.0 ? DetectedKind::JumpUp : DetectedKind::JumpDown;
            events.push_back(ev);
        }
    }
    return events;
}

namespace {

// Mean of an exponential truncated to [0, W].
double truncated_exp_mean(double tau, double window) {
    const double r = window / tau;
    if (r > 700.0) return tau;
    const double q = std::exp(-r);
    return tau - window * q / (1.0 - q);
}

double fit_truncated_exponential(const std::vector<double>& samples, double window) {
    if (samples.empty()) return 0.0;
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    // Truncated-exponential mean is monotone in tau; bisection.
    double lo = 1e-3;
    double hi = 1e4;
    if (mean >= 0.5 * window) return hi;  // indistinguishable from flat
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (truncated_exp_mean(mid, window) < mean) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

bool trace_reached_steady_state(const sim::Trace& trace, const LevelCalibration& cal,
                                double tail_ms) {
    if (trace.bins.empty()) return false;
    const auto tail_bins = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(tail_ms * 1000.0 / trace.cavity.bin_us)));
    const std::size_t start = trace.bins.size() > tail_bins
                                  ? trace.bins.size() - tail_bins
                                  : 0;
    double sum = 0.0;
    for (std::size_t i = start; i < trace.bins.size(); ++i) sum += trace.bins[i].t_est;
    const double mean = sum / static_cast<double>(trace.bins.size() - start);
    return cal.apparent_n(mean) < 1.5;
}

CollisionStats collision_statistics(std::span<const std::vector<DetectedEvent>> per_trial,
                                    double trial_duration_ms,
                                    std::span<const std::vector<sim::TruthEvent>> truth,
                                    const CollisionStatsOptions& opts,
                                    std::span<const std::uint8_t> steady_state) {
    if (per_trial.size() < static_cast<std::size_t>(opts.min_trials)) {
        throw InsufficientTrials("collision_statistics: need at least " +
                                 std::to_string(opts.min_trials) + " trials, got " +
                                 std::to_string(per_trial.size()));
    }

    CollisionStats stats;
    stats.trials = static_cast<int>(per_trial.size());
    stats.time_histogram = Histogram::with_range(0.0, trial_duration_ms, 0.5);
    stats.recovery_histogram = Histogram::with_range(0.0, 1.0, 0.01);

    std::int64_t fast = 0;
    std::int64_t recovered_count = 0;
    std::int64_t settled_trials = 0;
    std::int64_t settled_collisions = 0;
    std::vector<double> tail_times_ms;
    for (std::size_t trial_i = 0; trial_i < per_trial.size(); ++trial_i) {
        const auto& trial = per_trial[trial_i];
        std::int64_t trial_collisions = 0;
        for (const auto& ev : trial) {
            if (ev.kind != DetectedKind::Collision) continue;
            ++stats.collisions_detected;
            ++trial_collisions;
            const double t_ms = static_cast<double>(ev.t_us) * 1e-3;
            stats.time_histogram.add(t_ms);
            if (static_cast<double>(ev.t_us) <= opts.fast_window_us) ++fast;
            if (t_ms > opts.tail_fit_start_ms && t_ms <= opts.tail_fit_end_ms) {
                tail_times_ms.push_back(t_ms - opts.tail_fit_start_ms);
            }
            const double rec = ev.recovered_coupling.value_or(0.0);
            if (rec > opts.recovery_min) ++recovered_count;
            if (rec > opts.noise_floor) stats.recovery_histogram.add(rec);
        }
        // Collisions-before-settling counts trials that reached the zero-
        // or one-atom steady state within the window.
        if (steady_state.empty() || steady_state[trial_i]) {
            ++settled_trials;
            settled_collisions += trial_collisions;
        }
    }

    if (stats.collisions_detected > 0) {
        stats.fast_fraction =
            static_cast<double>(fast) / static_cast<double>(stats.collisions_detected);
        stats.recovery_fraction = static_cast<double>(recovered_count) /
                                  static_cast<double>(stats.collisions_detected);
    }
    stats.collisions_per_trial_mean =
        settled_trials > 0 ? static_cast<double>(settled_collisions) /
                                 static_cast<double>(settled_trials)
                           : 0.0;
    stats.slow_tau_fit_ms = fit_truncated_exponential(
        tail_times_ms,
        std::min(opts.tail_fit_end_ms, trial_duration_ms) - opts.tail_fit_start_ms);

    if (!truth.empty()) {
        std::int64_t both_lost = 0;
        std::int64_t one_lost = 0;
        std::int64_t both_heated = 0;
        for (const auto& trial : truth) {
            for (const auto& ev : trial) {
                if (ev.kind != sim::EventKind::Collision || !ev.outcome) continue;
                switch (*ev.outcome) {
                    case sim::CollisionOutcome::BothLost: ++both_lost; break;
                    case sim::CollisionOutcome::OneLost: ++one_lost; break;
                    case sim::CollisionOutcome::BothHeated: ++both_heated; break;
                }
            }
        }
        const double total = static_cast<double>(both_lost + one_lost + both_heated);
        if (total > 0) {
            stats.truth_outcomes = OutcomeFractions{
                static_cast<double>(both_lost) / total,
                static_cast<double>(one_lost) / total,
                static_cast<double>(both_heated) / total,
            };
        }
    }
    return stats;
}

}  // namespace cavsim::analysis
