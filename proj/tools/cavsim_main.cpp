// cavsim command-line interface.
//
//   simulate   seeded Monte Carlo run -> trace CSV + truth event log
//   analyze    trace CSVs -> detected events + collision statistics
//   fit        spectrum CSV -> cooperativity fit JSON
//   adapt      adaptive single-atom loading campaign
//   run        full experiment from a config file (with manifest)
//   validate   config diagnostics
//
// Exit codes: 0 success, 1 config error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cavsim/analysis.hpp"
#include "cavsim/cavity.hpp"
#include "cavsim/controller.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/harness.hpp"
#include "cavsim/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CavityFlags {
    double eta = 21.0;
    double gamma_hz = 5.2e6;
    double kappa_hz = 37e3;
    double delta_ca_mhz = 107.0;
    double delta_pc_hz = 0.0;
    double photons_per_bin = 1000.0;
    double bin_us = 100.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--eta", eta, "single-atom cooperativity");
        cmd->add_option("--gamma-hz", gamma_hz, "atomic linewidth Gamma/2pi [Hz]");
        cmd->add_option("--kappa-hz", kappa_hz, "cavity linewidth kappa/2pi [Hz]");
        cmd->add_option("--delta-ca-mhz", delta_ca_mhz, "cavity-atom detuning Delta/2pi [MHz]");
        cmd->add_option("--delta-pc-hz", delta_pc_hz, "probe-cavity detuning delta/2pi [Hz]");
        cmd->add_option("--photons-per-bin", photons_per_bin,
                        "mean detected photons per bin at T=1");
        cmd->add_option("--bin-us", bin_us, "detection bin length [us]");
    }

    cavsim::core::CavityConfig to_config() const {
        cavsim::core::CavityConfig cfg;
        cfg.eta = eta;
        cfg.gamma_hz = gamma_hz;
        cfg.kappa_hz = kappa_hz;
        cfg.delta_ca_hz = delta_ca_mhz * 1e6;
        cfg.delta_pc_hz = delta_pc_hz;
        cfg.photons_per_bin_empty = photons_per_bin;
        cfg.bin_us = bin_us;
        return cfg;
    }
};

std::vector<int> parse_occupancy(const std::string& traps) {
    std::vector<int> occ;
    std::stringstream ss(traps);
    std::string item;
    while (std::getline(ss, item, ',')) occ.push_back(std::stoi(item));
    return occ;
}

int run_simulate(const CavityFlags& cavity, const std::string& traps, int atoms,
                 double duration_ms, std::uint64_t seed, const std::string& out_prefix,
                 const cavsim::sim::SimParams& params) {
    const auto cfg = cavity.to_config();
    cavsim::sim::SimResult result;
    if (!traps.empty()) {
        const auto occupancy = parse_occupancy(traps);
        result = cavsim::sim::simulate_multi_trap(occupancy, cfg, params, duration_ms, seed);
    } else {
        result = cavsim::sim::simulate(atoms, cfg, params, duration_ms, seed);
    }
    const fs::path trace_path = out_prefix + ".csv";
    const fs::path truth_path = out_prefix + "_truth.jsonl";
    if (trace_path.has_parent_path()) fs::create_directories(trace_path.parent_path());
    cavsim::io::write_trace_csv(trace_path, result.trace);
    cavsim::io::write_truth_events_jsonl(truth_path, result.events);
    std::cout << "wrote " << trace_path.string() << " (" << result.trace.bins.size()
              << " bins), " << truth_path.string() << " (" << result.events.size()
              << " events)\n";
    return 0;
}

int run_analyze(const std::vector<std::string>& inputs, const std::string& out_dir,
                double noise_floor, int window_bins, int min_trials, bool emit_hist) {
    fs::create_directories(out_dir);
    cavsim::analysis::DetectOptions opts;
    opts.noise_floor = noise_floor;
    opts.window_bins = window_bins;

    std::vector<std::vector<cavsim::analysis::DetectedEvent>> per_trial;
    double duration_ms = 0.0;
    for (const auto& input : inputs) {
        const auto trace = cavsim::io::read_trace_csv(input);
        const auto cal = cavsim::analysis::calibration_from_config(trace.cavity, 4);
        auto events = cavsim::analysis::detect_events(trace, cal, opts);
        const fs::path out =
            fs::path(out_dir) / (fs::path(input).stem().string() + "_events.jsonl");
        cavsim::io::write_detected_events_jsonl(out, events);
        if (!trace.bins.empty()) {
            duration_ms = std::max(
                duration_ms,
                static_cast<double>(trace.bins.back().t_start_us) * 1e-3 +
                    trace.cavity.bin_us * 1e-3);
        }
        per_trial.push_back(std::move(events));
    }

    cavsim::analysis::CollisionStatsOptions stat_opts;
    stat_opts.min_trials = min_trials;
    stat_opts.noise_floor = noise_floor;
    const auto stats =
        cavsim::analysis::collision_statistics(per_trial, duration_ms, {}, stat_opts);

    json report{{"trials", stats.trials},
                {"collisions_detected", stats.collisions_detected},
                {"fast_fraction", stats.fast_fraction},
                {"slow_tau_fit_ms", stats.slow_tau_fit_ms},
                {"collisions_per_trial_mean", stats.collisions_per_trial_mean},
                {"recovery_fraction", stats.recovery_fraction}};
    std::ofstream out(fs::path(out_dir) / "report.json");
    out << report.dump(2) << "\n";

    if (emit_hist) {
        cavsim::io::write_histogram_csv(fs::path(out_dir) / "collision_time_histogram.csv",
                                        stats.time_histogram, "t_ms");
        cavsim::io::write_histogram_csv(fs::path(out_dir) / "recovery_histogram.csv",
                                        stats.recovery_histogram, "recovered_t");
    }
    std::cout << "analyzed " << per_trial.size() << " traces -> " << out_dir << "\n";
    return 0;
}

int run_fit(const CavityFlags& cavity, const std::string& input, const std::string& output,
            bool fit_kappa) {
    const auto points = cavsim::io::read_spectrum_csv(input);
    auto cfg = cavity.to_config();
    cavsim::core::FitOptions opts;
    opts.fit_kappa = fit_kappa;
    const auto fit = cavsim::core::fit_cooperativity(points, cfg, opts);
    json j{{"eta", fit.eta},
           {"eta_stderr", fit.eta_stderr},
           {"iterations", fit.iterations},
           {"residual", fit.residual}};
    if (fit_kappa) j["kappa_hz"] = fit.kappa_hz;
    if (output.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::ofstream out(output);
        out << j.dump(2) << "\n";
        std::cout << "wrote " << output << "\n";
    }
    return 0;
}

int run_adapt(const std::string& mode, int trials, double p_eject, std::uint64_t seed,
              int max_iter, const std::string& out_dir, bool serial) {
    // Route through the experiment runner so the outputs and manifest
    // match `run` with an adaptive config.
    cavsim::harness::ConfigMap config;
    config["experiment"]["kind"] = "adaptive";
    config["experiment"]["seed"] = std::to_string(seed);
    config["experiment"]["trials"] = std::to_string(trials);
    config["experiment"]["output_dir"] = out_dir;
    config["controller"]["mode"] = mode;
    if (p_eject > 0.0) config["controller"]["p_eject"] = std::to_string(p_eject);
    if (max_iter > 0) config["controller"]["max_iterations"] = std::to_string(max_iter);
    // Operating points: deeper detuning separates the one-atom window.
    config["cavity"]["delta_ca_hz"] = mode == "single-trap" ? "-58e6" : "-73e6";
    const auto result = cavsim::harness::run_experiment(
        config, false,
        serial ? cavsim::ExecMode::Serial : cavsim::ExecMode::OpenMP);
    std::cout << "wrote " << result.manifest_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cavity-assisted atom counting: simulator, trace analysis, adaptive loading"};
    app.require_subcommand(1);

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "run a seeded Monte Carlo trace");
    CavityFlags sim_cavity;
    sim_cavity.attach(sim_cmd);
    int sim_atoms = 1;
    std::string sim_traps;
    double sim_duration = 30.0;
    std::uint64_t sim_seed = 1;
    std::string sim_out = "trace";
    cavsim::sim::SimParams sim_params;
    sim_cmd->add_option("--atoms", sim_atoms, "atoms in a single trap");
    sim_cmd->add_option("--traps", sim_traps, "comma-separated occupancy per tweezer");
    sim_cmd->add_option("--duration-ms", sim_duration, "trace length [ms]");
    sim_cmd->add_option("--seed", sim_seed, "master seed")->required();
    sim_cmd->add_option("--out", sim_out, "output path prefix");
    sim_cmd->add_option("--initial-coupling", sim_params.initial_coupling,
                        "per-atom coupling at load");
    sim_cmd->add_flag("--repump-light", sim_params.repump_light_on, "weak repump light on");
    sim_cmd->add_flag("--depump-light", sim_params.depump_light_on, "depump light on");
    bool sim_no_collisions = false;
    bool sim_no_loss = false;
    sim_cmd->add_flag("--no-collisions", sim_no_collisions, "disable pair collisions");
    sim_cmd->add_flag("--no-loss", sim_no_loss, "disable background loss");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "detect events in trace CSVs");
    std::vector<std::string> analyze_inputs;
    std::string analyze_out = "analysis";
    double analyze_floor = 0.07;
    int analyze_window = 5;
    int analyze_min_trials = 100;
    bool analyze_hist = false;
    analyze_cmd->add_option("traces", analyze_inputs, "trace CSV files")->required();
    analyze_cmd->add_option("--out-dir", analyze_out, "output directory");
    analyze_cmd->add_option("--noise-floor", analyze_floor, "|dT| shot-noise floor");
    analyze_cmd->add_option("--window-bins", analyze_window, "change-point window [bins]");
    analyze_cmd->add_option("--min-trials", analyze_min_trials,
                            "trials required for statistics");
    analyze_cmd->add_flag("--emit-hist", analyze_hist, "write histogram CSVs");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit the cooperativity to spectra");
    CavityFlags fit_cavity;
    fit_cavity.delta_ca_mhz = -50.0;
    fit_cavity.attach(fit_cmd);
    std::string fit_input;
    std::string fit_output;
    bool fit_kappa = false;
    fit_cmd->add_option("input", fit_input, "spectrum CSV (n_atoms,x,transmission,sigma)")
        ->required();
    fit_cmd->add_option("--out", fit_output, "output JSON path (default stdout)");
    fit_cmd->add_flag("--fit-kappa", fit_kappa, "also free the cavity linewidth");

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "adaptive single-atom loading campaign");
    std::string adapt_mode = "multi-trap";
    int adapt_trials = 275;
    double adapt_p_eject = 0.0;
    std::uint64_t adapt_seed = 1;
    int adapt_max_iter = 0;
    std::string adapt_out = "adaptive";
    bool adapt_serial = false;
    adapt_cmd->add_option("--mode", adapt_mode, "multi-trap | single-trap")
        ->check(CLI::IsMember({"multi-trap", "single-trap"}));
    adapt_cmd->add_option("--trials", adapt_trials, "postselected trials to collect");
    adapt_cmd->add_option("--p-eject", adapt_p_eject, "push-out efficiency (default per mode)");
    adapt_cmd->add_option("--seed", adapt_seed, "master seed")->required();
    adapt_cmd->add_option("--max-iter", adapt_max_iter, "iteration limit (default per mode)");
    adapt_cmd->add_option("--out-dir", adapt_out, "output directory");
    adapt_cmd->add_flag("--serial", adapt_serial, "run trials on one thread");

    // run
    auto* run_cmd = app.add_subcommand("run", "run an experiment config");
    std::string run_config;
    bool run_quick = false;
    bool run_serial = false;
    run_cmd->add_option("config", run_config, "experiment config file")->required();
    run_cmd->add_flag("--quick", run_quick, "divide trial counts by 10");
    run_cmd->add_flag("--serial", run_serial, "run trials on one thread");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "validate an experiment config");
    std::string validate_config_path;
    validate_cmd->add_option("config", validate_config_path, "experiment config file")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim_cmd->parsed()) {
            sim_params.collisions_on = !sim_no_collisions;
            sim_params.background_loss_on = !sim_no_loss;
            return run_simulate(sim_cavity, sim_traps, sim_atoms, sim_duration, sim_seed,
                                sim_out, sim_params);
        }
        if (analyze_cmd->parsed()) {
            return run_analyze(analyze_inputs, analyze_out, analyze_floor, analyze_window,
                               analyze_min_trials, analyze_hist);
        }
        if (fit_cmd->parsed()) {
            return run_fit(fit_cavity, fit_input, fit_output, fit_kappa);
        }
        if (adapt_cmd->parsed()) {
            return run_adapt(adapt_mode, adapt_trials, adapt_p_eject, adapt_seed,
                             adapt_max_iter, adapt_out, adapt_serial);
        }
        if (run_cmd->parsed()) {
            const auto result = cavsim::harness::run_experiment(
                run_config, run_quick,
                run_serial ? cavsim::ExecMode::Serial : cavsim::ExecMode::OpenMP);
            std::cout << "wrote " << result.files.size() << " files, manifest "
                      << result.manifest_path.string() << "\n";
            return 0;
        }
        if (validate_cmd->parsed()) {
            std::vector<std::string> diags;
            try {
                diags = cavsim::harness::validate_config(validate_config_path);
            } catch (const std::exception& ex) {
                std::cerr << "error: " << ex.what() << "\n";
                return 2;
            }
            for (const auto& d : diags) std::cout << d << "\n";
            if (diags.empty()) {
                std::cout << "ok\n";
                return 0;
            }
            return 1;
        }
    } catch (const cavsim::harness::ConfigError& ex) {
        for (const auto& d : ex.diagnostics) std::cerr << "config error: " << d << "\n";
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 0;
}
