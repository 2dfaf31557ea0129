// Experiment harness: sectioned key/value config files, full-file
// validation, experiment runners that regenerate each dataset at desk
// scale, and a reproducibility manifest.
//
// Any config key can be overridden from the environment as
// CAVSIM_<SECTION>_<KEY> (upper case). All randomness flows from the
// config seed; per-trial seeds use the counter scheme in rng.hpp.

#ifndef CAVSIM_HARNESS_HPP
#define CAVSIM_HARNESS_HPP

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cavsim/cavity.hpp"
#include "cavsim/controller.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/parallel.hpp"

namespace cavsim::harness {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
    explicit ConfigError(std::vector<std::string> diags);
    std::vector<std::string> diagnostics;
};

// section -> key -> raw value. Sections and keys are lower case.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config(const std::filesystem::path& path);  // parses + env overrides
void apply_env_overrides(ConfigMap& config);
std::string canonical_dump(const ConfigMap& config);
std::uint64_t config_hash(const ConfigMap& config);

// All violations, not first-failure. Empty means valid.
std::vector<std::string> validate_config_map(const ConfigMap& config);
std::vector<std::string> validate_config(const std::filesystem::path& path);

enum class ExperimentKind { Spectrum, Histogram, Traces, Collisions, Adaptive };

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Spectrum;
    std::uint64_t seed = 0;
    int trials = 1000;
    double duration_ms = 30.0;
    std::filesystem::path output_dir;

    core::CavityConfig cavity;
    sim::SimParams sim;
    control::CampaignConfig campaign;

    double collisions_lambda = 1.6;  // truncated-Poisson occupancy (>= 2)
    double spectrum_x_lo = -8.0;
    double spectrum_x_hi = 4.0;
    int spectrum_points = 61;
    double spectrum_noise_sigma = 0.01;
    int histogram_n_max = 3;
};

// Builds the typed config; call validate_config_map first.
ExperimentConfig build_experiment(const ConfigMap& config);

struct RunResult {
    std::filesystem::path manifest_path;
    std::vector<std::filesystem::path> files;  // everything the run wrote
};

// Runs the configured experiment, writing all artifacts plus
// manifest.json under the config's output_dir. Re-running with the same
// config reproduces byte-identical data files. quick divides the trial
// count by 10 for CI.
RunResult run_experiment(const std::filesystem::path& config_path, bool quick = false,
                         ExecMode exec = ExecMode::OpenMP);
RunResult run_experiment(const ConfigMap& config, bool quick = false,
                         ExecMode exec = ExecMode::OpenMP);

// Occupancy draw shared by the collisions experiment and its tests:
// Poisson(lambda) conditioned on n >= 2, clamped to 16.
int draw_truncated_poisson_occupancy(double lambda, RandomStream& stream);

}  // namespace cavsim::harness

#endif  // CAVSIM_HARNESS_HPP
