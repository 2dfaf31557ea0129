// Serial vs OpenMP benchmark for the Monte Carlo batch kernels.
//
// Both paths run the same per-trial code with per-trial seeds and write to
// per-trial slots, so the outputs must be identical; this checks that and
// reports the speedup.

#include <chrono>
#include <cstdio>
#include <vector>

#include "cavsim/analysis.hpp"
#include "cavsim/cavity.hpp"
#include "cavsim/controller.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/harness.hpp"
#include "cavsim/parallel.hpp"

using namespace cavsim;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch())
        .count();
}

core::CavityConfig collision_config() {
    core::CavityConfig cfg;
    cfg.delta_ca_hz = 107e6;
    return cfg;
}

// Collision batch: simulate + detect per trial; returns a checksum over
// detected event times.
std::uint64_t collision_batch(int trials, ExecMode mode, double* elapsed_ms) {
    const auto cfg = collision_config();
    sim::SimParams params;
    params.initial_coupling = 1.0;
    const auto cal = analysis::calibration_from_config(cfg, 4);
    std::vector<std::uint64_t> sums(static_cast<std::size_t>(trials), 0);

    const double start = now_ms();
    for_each_index(static_cast<std::size_t>(trials), mode, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(42, i);
        auto streams = SimStreams::from_seed(seed);
        const int n0 =
            harness::draw_truncated_poisson_occupancy(1.6, streams.occupancy);
        const auto result = sim::simulate(n0, cfg, params, 30.0, seed);
        const auto events = analysis::detect_events(result.trace, cal);
        std::uint64_t sum = 0;
        for (const auto& ev : events) {
            sum = sum * 1000003 + static_cast<std::uint64_t>(ev.t_us);
        }
        sums[i] = sum;
    });
    *elapsed_ms = now_ms() - start;

    std::uint64_t total = 0;
    for (auto s : sums) total = total * 16777619 + s;
    return total;
}

std::uint64_t adaptive_batch(int trials, ExecMode mode, double* elapsed_ms) {
    const auto cfg = [] {
        core::CavityConfig c;
        c.delta_ca_hz = -73e6;
        return c;
    }();
    sim::SimParams params;
    control::CampaignConfig campaign_config;
    campaign_config.mode = control::LoadingMode::MultiTrap;
    campaign_config.trials = trials;
    campaign_config.seed = 42;
    campaign_config.exec = mode;

    const double start = now_ms();
    const auto report = control::campaign(campaign_config, cfg, params);
    *elapsed_ms = now_ms() - start;
    return static_cast<std::uint64_t>(report.success_rate * 1e9) * 31 +
           static_cast<std::uint64_t>(report.excluded);
}

}  // namespace

int main(int argc, char** argv) {
    int trials = 400;
    if (argc > 1) trials = std::atoi(argv[1]);
    std::printf("workers available: %d\n", hardware_workers());

    double serial_ms = 0.0;
    double parallel_ms = 0.0;

    const auto c_serial = collision_batch(trials, ExecMode::Serial, &serial_ms);
    const auto c_parallel = collision_batch(trials, ExecMode::OpenMP, &parallel_ms);
    std::printf("collision batch (%d trials): serial %.0f ms, openmp %.0f ms, speedup %.2fx, %s\n",
                trials, serial_ms, parallel_ms, serial_ms / parallel_ms,
                c_serial == c_parallel ? "results identical" : "RESULTS DIFFER");

    const auto a_serial = adaptive_batch(trials, ExecMode::Serial, &serial_ms);
    const auto a_parallel = adaptive_batch(trials, ExecMode::OpenMP, &parallel_ms);
    std::printf("adaptive batch  (%d trials): serial %.0f ms, openmp %.0f ms, speedup %.2fx, %s\n",
                trials, serial_ms, parallel_ms, serial_ms / parallel_ms,
                a_serial == a_parallel ? "results identical" : "RESULTS DIFFER");

    return (c_serial == c_parallel && a_serial == a_parallel) ? 0 : 1;
}
