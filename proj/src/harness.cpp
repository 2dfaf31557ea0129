#include "cavsim/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "cavsim/analysis.hpp"
#include "cavsim/io.hpp"

namespace cavsim::harness {

using nlohmann::json;
namespace fs = std::filesystem;

ConfigError::ConfigError(std::vector<std::string> diags)
    : std::runtime_error(diags.empty() ? "invalid config"
                                       : "invalid config: " + diags.front()),
      diagnostics(std::move(diags)) {}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

// Known keys per section; drives env overrides and unknown-key checks.
const std::map<std::string, std::vector<std::string>>& schema() {
    static const std::map<std::string, std::vector<std::string>> s = {
        {"experiment", {"kind", "seed", "trials", "duration_ms", "output_dir"}},
        {"cavity",
         {"eta", "gamma_hz", "kappa_hz", "delta_ca_hz", "delta_pc_hz",
          "photons_per_bin_empty", "bin_us"}},
        {"sim",
         {"pump_tau_ms", "pump_window_ms", "initial_coupling", "collision_fast_fraction",
          "collision_fast_tau_us", "collision_onset_us", "collision_slow_tau_ms", "p_both_lost", "p_one_lost",
          "p_both_heated", "heated_coupling", "recool_tau_ms", "loss_tau_ms_cooling",
          "loss_tau_ms_heating", "repump_rate_per_ms", "depump_rate_per_ms", "tick_us",
          "repump_light_on", "depump_light_on", "collisions_on", "background_loss_on",
          "pulsed_heating_loss_tau_ms", "pulsed_collision_scale", "hot_pulsed_loss_tau_ms",
          "push_p_eject", "push_p_leak",
          "push_survivor_coupling_min"}},
        {"controller",
         {"mode", "max_iterations", "p_eject", "trap_count", "fill_probability",
          "lambda_single"}},
        {"collisions", {"lambda"}},
        {"spectrum", {"x_lo", "x_hi", "points", "noise_sigma"}},
        {"histogram", {"n_max"}},
    };
    return s;
}

struct Parser {
    const ConfigMap& config;
    std::vector<std::string>* diags = nullptr;  // collect instead of throwing

    void report(const std::string& message) const {
        if (diags) diags->push_back(message);
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto sit = config.find(section);
        if (sit == config.end()) return false;
        return sit->second.count(key) > 0;
    }

    std::string raw(const std::string& section, const std::string& key) const {
        return config.at(section).at(key);
    }

    double number(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = raw(section, key);
        try {
            std::size_t used = 0;
            const double parsed = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return parsed;
        } catch (const std::exception&) {
            report(section + "." + key + ": not a number: '" + v + "'");
            return fallback;
        }
    }

    std::int64_t integer(const std::string& section, const std::string& key,
                         std::int64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = raw(section, key);
        try {
            std::size_t used = 0;
            const long long parsed = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return parsed;
        } catch (const std::exception&) {
            report(section + "." + key + ": not an integer: '" + v + "'");
            return fallback;
        }
    }

    bool boolean(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = lower(raw(section, key));
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        report(section + "." + key + ": not a boolean: '" + v + "'");
        return fallback;
    }
};

core::CavityConfig cavity_from(const Parser& p) {
    core::CavityConfig cfg;
    cfg.eta = p.number("cavity", "eta", cfg.eta);
    cfg.gamma_hz = p.number("cavity", "gamma_hz", cfg.gamma_hz);
    cfg.kappa_hz = p.number("cavity", "kappa_hz", cfg.kappa_hz);
    cfg.delta_ca_hz = p.number("cavity", "delta_ca_hz", cfg.delta_ca_hz);
    cfg.delta_pc_hz = p.number("cavity", "delta_pc_hz", cfg.delta_pc_hz);
    cfg.photons_per_bin_empty =
        p.number("cavity", "photons_per_bin_empty", cfg.photons_per_bin_empty);
    cfg.bin_us = p.number("cavity", "bin_us", cfg.bin_us);
    return cfg;
}

sim::SimParams sim_from(const Parser& p) {
    sim::SimParams s;
    s.pump_tau_ms = p.number("sim", "pump_tau_ms", s.pump_tau_ms);
    s.pump_window_ms = p.number("sim", "pump_window_ms", s.pump_window_ms);
    s.initial_coupling = p.number("sim", "initial_coupling", s.initial_coupling);
    s.collision_fast_fraction =
        p.number("sim", "collision_fast_fraction", s.collision_fast_fraction);
    s.collision_fast_tau_us = p.number("sim", "collision_fast_tau_us", s.collision_fast_tau_us);
    s.collision_onset_us = p.number("sim", "collision_onset_us", s.collision_onset_us);
    s.collision_slow_tau_ms = p.number("sim", "collision_slow_tau_ms", s.collision_slow_tau_ms);
    s.p_both_lost = p.number("sim", "p_both_lost", s.p_both_lost);
    s.p_one_lost = p.number("sim", "p_one_lost", s.p_one_lost);
    s.p_both_heated = p.number("sim", "p_both_heated", s.p_both_heated);
    s.heated_coupling = p.number("sim", "heated_coupling", s.heated_coupling);
    s.recool_tau_ms = p.number("sim", "recool_tau_ms", s.recool_tau_ms);
    s.loss_tau_ms_cooling = p.number("sim", "loss_tau_ms_cooling", s.loss_tau_ms_cooling);
    s.loss_tau_ms_heating = p.number("sim", "loss_tau_ms_heating", s.loss_tau_ms_heating);
    s.repump_rate_per_ms = p.number("sim", "repump_rate_per_ms", s.repump_rate_per_ms);
    s.depump_rate_per_ms = p.number("sim", "depump_rate_per_ms", s.depump_rate_per_ms);
    s.tick_us = p.number("sim", "tick_us", s.tick_us);
    s.repump_light_on = p.boolean("sim", "repump_light_on", s.repump_light_on);
    s.depump_light_on = p.boolean("sim", "depump_light_on", s.depump_light_on);
    s.collisions_on = p.boolean("sim", "collisions_on", s.collisions_on);
    s.background_loss_on = p.boolean("sim", "background_loss_on", s.background_loss_on);
    s.pulsed_heating_loss_tau_ms =
        p.number("sim", "pulsed_heating_loss_tau_ms", s.pulsed_heating_loss_tau_ms);
    s.pulsed_collision_scale = p.number("sim", "pulsed_collision_scale", s.pulsed_collision_scale);
    s.hot_pulsed_loss_tau_ms = p.number("sim", "hot_pulsed_loss_tau_ms", s.hot_pulsed_loss_tau_ms);
    s.push_p_eject = p.number("sim", "push_p_eject", s.push_p_eject);
    s.push_p_leak = p.number("sim", "push_p_leak", s.push_p_leak);
    s.push_survivor_coupling_min =
        p.number("sim", "push_survivor_coupling_min", s.push_survivor_coupling_min);
    return s;
}

control::CampaignConfig campaign_from(const Parser& p) {
    control::CampaignConfig c;
    const std::string mode = lower(p.has("controller", "mode") ? p.raw("controller", "mode")
                                                               : "multi-trap");
    if (mode == "multi-trap") {
        c.mode = control::LoadingMode::MultiTrap;
        c.max_iterations = 25;
        c.p_eject = 0.80;
    } else if (mode == "single-trap") {
        c.mode = control::LoadingMode::SingleTrap;
        c.max_iterations = 50;
        c.p_eject = 0.63;
    } else {
        p.report("controller.mode: must be 'multi-trap' or 'single-trap', got '" + mode + "'");
    }
    c.max_iterations = static_cast<int>(
        p.integer("controller", "max_iterations", c.max_iterations));
    c.p_eject = p.number("controller", "p_eject", c.p_eject);
    c.trap_count = static_cast<int>(p.integer("controller", "trap_count", c.trap_count));
    c.fill_probability = p.number("controller", "fill_probability", c.fill_probability);
    c.lambda_single = p.number("controller", "lambda_single", c.lambda_single);
    return c;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap config;
    std::istringstream in(text);
    std::string line;
    std::string section = "experiment";
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unterminated section header");
            }
            section = lower(trim(line.substr(1, line.size() - 2)));
            config[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        }
        const std::string key = lower(trim(line.substr(0, eq)));
        config[section][key] = trim(line.substr(eq + 1));
    }
    return config;
}

void apply_env_overrides(ConfigMap& config) {
    for (const auto& [section, keys] : schema()) {
        for (const auto& key : keys) {
            const std::string var = "CAVSIM_" + upper(section) + "_" + upper(key);
            if (const char* value = std::getenv(var.c_str())) {
                config[section][key] = value;
            }
        }
    }
}

ConfigMap load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open config");
    std::stringstream buffer;
    buffer << in.rdbuf();
    ConfigMap config = parse_config_text(buffer.str());
    apply_env_overrides(config);
    return config;
}

std::string canonical_dump(const ConfigMap& config) {
    std::string out;
    for (const auto& [section, keys] : config) {
        out += "[" + section + "]\n";
        for (const auto& [key, value] : keys) {
            out += key + " = " + value + "\n";
        }
    }
    return out;
}

std::uint64_t config_hash(const ConfigMap& config) {
    const std::string dump = canonical_dump(config);
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (unsigned char c : dump) {
        hash ^= c;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

std::vector<std::string> validate_config_map(const ConfigMap& config) {
    std::vector<std::string> diags;
    Parser p{config, &diags};

    // Unknown sections and keys.
    for (const auto& [section, keys] : config) {
        const auto sit = schema().find(section);
        if (sit == schema().end()) {
            diags.push_back(section + ": unknown section");
            continue;
        }
        for (const auto& [key, value] : keys) {
            if (std::find(sit->second.begin(), sit->second.end(), key) == sit->second.end()) {
                diags.push_back(section + "." + key + ": unknown key");
            }
        }
    }

    // experiment section.
    if (!p.has("experiment", "kind")) {
        diags.push_back("experiment.kind: required (spectrum|histogram|traces|collisions|adaptive)");
    } else {
        const std::string kind = lower(p.raw("experiment", "kind"));
        if (kind != "spectrum" && kind != "histogram" && kind != "traces" &&
            kind != "collisions" && kind != "adaptive") {
            diags.push_back("experiment.kind: unknown experiment '" + kind + "'");
        }
    }
    if (!p.has("experiment", "seed")) {
        diags.push_back("experiment.seed: required (no wall-clock seeding)");
    } else {
        p.integer("experiment", "seed", 0);
    }
    if (p.integer("experiment", "trials", 1) < 1) {
        diags.push_back("experiment.trials: must be >= 1");
    }
    if (!(p.number("experiment", "duration_ms", 30.0) > 0.0)) {
        diags.push_back("experiment.duration_ms: must be > 0");
    }

    // cavity section.
    const core::CavityConfig cavity = cavity_from(p);
    auto positive = [&](double v, const char* name) {
        if (!(v > 0.0)) diags.push_back(std::string(name) + ": must be > 0");
    };
    positive(cavity.eta, "cavity.eta");
    positive(cavity.gamma_hz, "cavity.gamma_hz");
    positive(cavity.kappa_hz, "cavity.kappa_hz");
    positive(cavity.photons_per_bin_empty, "cavity.photons_per_bin_empty");
    positive(cavity.bin_us, "cavity.bin_us");

    // sim section.
    const sim::SimParams s = sim_from(p);
    positive(s.pump_tau_ms, "sim.pump_tau_ms");
    positive(s.pump_window_ms, "sim.pump_window_ms");
    positive(s.collision_fast_tau_us, "sim.collision_fast_tau_us");
    positive(s.collision_slow_tau_ms, "sim.collision_slow_tau_ms");
    positive(s.recool_tau_ms, "sim.recool_tau_ms");
    positive(s.loss_tau_ms_cooling, "sim.loss_tau_ms_cooling");
    positive(s.loss_tau_ms_heating, "sim.loss_tau_ms_heating");
    positive(s.pulsed_heating_loss_tau_ms, "sim.pulsed_heating_loss_tau_ms");
    positive(s.hot_pulsed_loss_tau_ms, "sim.hot_pulsed_loss_tau_ms");
    positive(s.repump_rate_per_ms, "sim.repump_rate_per_ms");
    positive(s.depump_rate_per_ms, "sim.depump_rate_per_ms");
    positive(s.tick_us, "sim.tick_us");
    auto unit = [&](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) diags.push_back(std::string(name) + ": must be in [0, 1]");
    };
    unit(s.initial_coupling, "sim.initial_coupling");
    unit(s.collision_fast_fraction, "sim.collision_fast_fraction");
    unit(s.p_both_lost, "sim.p_both_lost");
    unit(s.p_one_lost, "sim.p_one_lost");
    unit(s.p_both_heated, "sim.p_both_heated");
    unit(s.heated_coupling, "sim.heated_coupling");
    unit(s.pulsed_collision_scale, "sim.pulsed_collision_scale");
    unit(s.push_p_eject, "sim.push_p_eject");
    unit(s.push_p_leak, "sim.push_p_leak");
    unit(s.push_survivor_coupling_min, "sim.push_survivor_coupling_min");
    const double simplex = s.p_both_lost + s.p_one_lost + s.p_both_heated;
    if (std::fabs(simplex - 1.0) > 1e-9) {
        diags.push_back(
            "sim.p_both_lost + sim.p_one_lost + sim.p_both_heated: must sum to 1, got " +
            std::to_string(simplex));
    }
    if (cavity.bin_us > 0.0 && s.tick_us > 0.0) {
        const double ratio = cavity.bin_us / s.tick_us;
        if (std::fabs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
            diags.push_back("sim.tick_us: must divide cavity.bin_us");
        }
    }

    // controller section.
    const control::CampaignConfig c = campaign_from(p);
    if (c.max_iterations < 1) diags.push_back("controller.max_iterations: must be >= 1");
    unit(c.p_eject, "controller.p_eject");
    unit(c.fill_probability, "controller.fill_probability");
    if (c.trap_count < 1) diags.push_back("controller.trap_count: must be >= 1");
    positive(c.lambda_single, "controller.lambda_single");

    if (p.has("collisions", "lambda")) positive(p.number("collisions", "lambda", 1.6), "collisions.lambda");
    if (p.has("spectrum", "points") && p.integer("spectrum", "points", 61) < 10) {
        diags.push_back("spectrum.points: must be >= 10");
    }
    if (p.has("histogram", "n_max")) {
        const auto n_max = p.integer("histogram", "n_max", 3);
        if (n_max < 1 || n_max > 4) diags.push_back("histogram.n_max: must be in [1, 4]");
    }
    return diags;
}

std::vector<std::string> validate_config(const std::filesystem::path& path) {
    return validate_config_map(load_config(path));
}

ExperimentConfig build_experiment(const ConfigMap& config) {
    Parser p{config, nullptr};
    ExperimentConfig e;
    const std::string kind = lower(p.has("experiment", "kind") ? p.raw("experiment", "kind")
                                                               : "spectrum");
    if (kind == "spectrum") e.kind = ExperimentKind::Spectrum;
    else if (kind == "histogram") e.kind = ExperimentKind::Histogram;
    else if (kind == "traces") e.kind = ExperimentKind::Traces;
    else if (kind == "collisions") e.kind = ExperimentKind::Collisions;
    else if (kind == "adaptive") e.kind = ExperimentKind::Adaptive;
    else throw std::runtime_error("unknown experiment kind: " + kind);

    e.seed = static_cast<std::uint64_t>(p.integer("experiment", "seed", 1));
    e.trials = static_cast<int>(p.integer("experiment", "trials", 1000));
    e.duration_ms = p.number("experiment", "duration_ms", 30.0);
    e.output_dir = p.has("experiment", "output_dir") ? p.raw("experiment", "output_dir")
                                                     : std::string("out");
    e.cavity = cavity_from(p);
    e.sim = sim_from(p);
    e.campaign = campaign_from(p);
    e.campaign.seed = e.seed;
    e.campaign.trials = e.trials;
    e.collisions_lambda = p.number("collisions", "lambda", e.collisions_lambda);
    e.spectrum_x_lo = p.number("spectrum", "x_lo", e.spectrum_x_lo);
    e.spectrum_x_hi = p.number("spectrum", "x_hi", e.spectrum_x_hi);
    e.spectrum_points = static_cast<int>(p.integer("spectrum", "points", e.spectrum_points));
    e.spectrum_noise_sigma = p.number("spectrum", "noise_sigma", e.spectrum_noise_sigma);
    e.histogram_n_max = static_cast<int>(p.integer("histogram", "n_max", e.histogram_n_max));
    return e;
}

int draw_truncated_poisson_occupancy(double lambda, RandomStream& stream) {
    for (;;) {
        const auto n = stream.poisson(lambda);
        if (n >= 2) return static_cast<int>(std::min<std::int64_t>(n, 16));
    }
}

namespace {

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

analysis::Histogram histogram_of(const std::vector<double>& values, double lo, double hi,
                                 double width) {
    auto h = analysis::Histogram::with_range(lo, hi, width);
    for (double v : values) h.add(v);
    return h;
}

std::vector<fs::path> run_spectrum(const ExperimentConfig& e, const fs::path& dir) {
    std::vector<fs::path> files;
    std::vector<double> grid(static_cast<std::size_t>(e.spectrum_points));
    const double step = (e.spectrum_x_hi - e.spectrum_x_lo) /
                        static_cast<double>(e.spectrum_points - 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = e.spectrum_x_lo + step * static_cast<double>(i);
    }

    std::vector<core::SpectrumPoint> all;
    for (int n = 0; n <= 3; ++n) {
        auto pts = core::spectrum(n, e.cavity, grid);
        RandomStream noise(derive_seed(trial_seed(e.seed, static_cast<std::uint64_t>(n)),
                                       static_cast<std::uint64_t>(StreamTag::Noise)));
        for (auto& p : pts) {
            p.transmission += noise.gaussian(0.0, e.spectrum_noise_sigma);
            p.sigma = e.spectrum_noise_sigma;
        }
        const fs::path file = dir / ("spectrum_n" + std::to_string(n) + ".csv");
        io::write_spectrum_csv(file, pts);
        files.push_back(file);
        all.insert(all.end(), pts.begin(), pts.end());
    }

    const auto fit = core::fit_cooperativity(all, e.cavity);
    const fs::path fit_file = dir / "fit.json";
    write_json(fit_file, json{{"eta", fit.eta},
                              {"eta_stderr", fit.eta_stderr},
                              {"iterations", fit.iterations},
                              {"residual", fit.residual}});
    files.push_back(fit_file);
    return files;
}

std::vector<fs::path> run_histogram(const ExperimentConfig& e, const fs::path& dir) {
    std::vector<fs::path> files;
    std::vector<sim::Trace> traces;
    auto hist = analysis::Histogram::with_range(0.0, 1.3, 0.01);

    std::int64_t correct = 0;
    std::int64_t classified = 0;
    std::vector<std::vector<analysis::ClassifiedBin>> per_n;
    for (int n = 0; n <= e.histogram_n_max; ++n) {
        auto result = sim::simulate(n, e.cavity, e.sim, e.duration_ms,
                                    trial_seed(e.seed, static_cast<std::uint64_t>(n)));
        for (const auto& bin : result.trace.bins) hist.add(bin.t_est);
        const fs::path file = dir / ("trace_n" + std::to_string(n) + ".csv");
        io::write_trace_csv(file, result.trace);
        files.push_back(file);
        traces.push_back(std::move(result.trace));
    }

    const auto cal = analysis::calibrate_levels(traces, e.cavity, e.histogram_n_max);
    for (int n = 0; n <= e.histogram_n_max; ++n) {
        const auto classified_bins =
            analysis::classify_bins(traces[static_cast<std::size_t>(n)], cal, 1);
        for (const auto& cb : classified_bins) {
            ++classified;
            if (cb.n_hat == n) ++correct;
        }
    }

    const fs::path hist_file = dir / "histogram.csv";
    io::write_histogram_csv(hist_file, hist, "t_est");
    files.push_back(hist_file);

    json levels = json::array();
    for (const auto& level : cal.levels) {
        levels.push_back(json{{"n_atoms", level.n_atoms},
                              {"t_level", level.t_level},
                              {"extrapolated", level.extrapolated}});
    }
    const fs::path cal_file = dir / "levels.json";
    write_json(cal_file,
               json{{"levels", levels},
                    {"thresholds", cal.thresholds},
                    {"classification_accuracy",
                     classified > 0 ? static_cast<double>(correct) /
                                          static_cast<double>(classified)
                                    : 0.0}});
    files.push_back(cal_file);
    return files;
}

std::vector<fs::path> run_traces(const ExperimentConfig& e, const fs::path& dir) {
    std::vector<fs::path> files;

    // Telegraph traces: one atom per tweezer, hyperfine light on.
    {
        sim::SimParams params = e.sim;
        params.repump_light_on = true;
        params.depump_light_on = true;
        const std::vector<int> occupancy(4, 1);
        auto result = sim::simulate_multi_trap(occupancy, e.cavity, params, e.duration_ms,
                                               trial_seed(e.seed, 0));
        const fs::path trace_file = dir / "trace_tweezers.csv";
        io::write_trace_csv(trace_file, result.trace);
        files.push_back(trace_file);
        const fs::path events_file = dir / "trace_tweezers_truth.jsonl";
        io::write_truth_events_jsonl(events_file, result.events);
        files.push_back(events_file);
    }

    // Several atoms in one trap: collisions visible.
    {
        const std::uint64_t seed = trial_seed(e.seed, 1);
        auto streams = SimStreams::from_seed(seed);
        const int n0 = draw_truncated_poisson_occupancy(e.collisions_lambda,
                                                        streams.occupancy);
        auto result = sim::simulate(n0, e.cavity, e.sim, e.duration_ms, seed);
        const fs::path trace_file = dir / "trace_single_trap.csv";
        io::write_trace_csv(trace_file, result.trace);
        files.push_back(trace_file);
        const fs::path events_file = dir / "trace_single_trap_truth.jsonl";
        io::write_truth_events_jsonl(events_file, result.events);
        files.push_back(events_file);

        const auto cal = analysis::calibration_from_config(e.cavity, 4);
        const auto detected = analysis::detect_events(result.trace, cal);
        const fs::path detected_file = dir / "trace_single_trap_detected.jsonl";
        io::write_detected_events_jsonl(detected_file, detected);
        files.push_back(detected_file);
    }
    return files;
}

std::vector<fs::path> run_collisions(const ExperimentConfig& e, const fs::path& dir,
                                     ExecMode exec) {
    std::vector<fs::path> files;
    const auto trials = static_cast<std::size_t>(e.trials);
    std::vector<std::vector<analysis::DetectedEvent>> detected(trials);
    std::vector<std::vector<sim::TruthEvent>> truth(trials);
    std::vector<int> occupancies(trials);
    const auto cal = analysis::calibration_from_config(e.cavity, 4);

    for_each_index(trials, exec, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(e.seed, i);
        auto streams = SimStreams::from_seed(seed);
        const int n0 = draw_truncated_poisson_occupancy(e.collisions_lambda,
                                                        streams.occupancy);
        occupancies[i] = n0;
        auto result = sim::simulate(n0, e.cavity, e.sim, e.duration_ms, seed);
        detected[i] = analysis::detect_events(result.trace, cal);
        truth[i] = std::move(result.events);
    });

    const auto stats = analysis::collision_statistics(detected, e.duration_ms, truth);

    // Collisions observed per trial before the trap settles.
    auto per_trial_hist = analysis::Histogram::with_range(0.0, 10.0, 1.0);
    for (const auto& trial : detected) {
        int count = 0;
        for (const auto& ev : trial) {
            if (ev.kind == analysis::DetectedKind::Collision) ++count;
        }
        per_trial_hist.add(static_cast<double>(count));
    }

    json report{{"trials", stats.trials},
                {"collisions_detected", stats.collisions_detected},
                {"fast_fraction", stats.fast_fraction},
                {"slow_tau_fit_ms", stats.slow_tau_fit_ms},
                {"collisions_per_trial_mean", stats.collisions_per_trial_mean},
                {"recovery_fraction", stats.recovery_fraction},
                {"recovery_peak_t", stats.recovery_histogram.mode_center()},
                {"mean_initial_atoms",
                 std::accumulate(occupancies.begin(), occupancies.end(), 0.0) /
                     static_cast<double>(trials)}};
    if (stats.truth_outcomes) {
        report["truth_outcomes"] = json{{"both_lost", stats.truth_outcomes->both_lost},
                                        {"one_lost", stats.truth_outcomes->one_lost},
                                        {"both_heated", stats.truth_outcomes->both_heated}};
    }
    const fs::path report_file = dir / "report.json";
    write_json(report_file, report);
    files.push_back(report_file);

    const fs::path time_file = dir / "collision_time_histogram.csv";
    io::write_histogram_csv(time_file, stats.time_histogram, "t_ms");
    files.push_back(time_file);
    const fs::path recovery_file = dir / "recovery_histogram.csv";
    io::write_histogram_csv(recovery_file, stats.recovery_histogram, "recovered_t");
    files.push_back(recovery_file);
    const fs::path per_trial_file = dir / "collisions_per_trial.csv";
    io::write_histogram_csv(per_trial_file, per_trial_hist, "collisions");
    files.push_back(per_trial_file);
    return files;
}

std::vector<fs::path> run_adaptive(const ExperimentConfig& e, const fs::path& dir,
                                   ExecMode exec) {
    std::vector<fs::path> files;
    control::CampaignConfig campaign_config = e.campaign;
    campaign_config.exec = exec;
    std::vector<control::TrialRecord> records;
    const auto report = control::campaign(campaign_config, e.cavity, e.sim, &records);

    const fs::path records_file = dir / "trials.jsonl";
    io::write_trial_records_jsonl(records_file, records);
    files.push_back(records_file);

    json j{{"trials", report.trials},
           {"excluded", report.excluded},
           {"success_rate", report.success_rate},
           {"success_stderr", report.success_stderr},
           {"mean_time_to_success_ms", report.mean_time_to_success_ms},
           {"failures",
            json{{"atom_loss", report.failures_atom_loss},
                 {"ejection_error", report.failures_ejection},
                 {"iteration_limit", report.failures_iteration_limit}}}};
    const fs::path report_file = dir / "report.json";
    write_json(report_file, j);
    files.push_back(report_file);

    const fs::path initial_file = dir / "initial_t_histogram.csv";
    io::write_histogram_csv(initial_file, histogram_of(report.initial_t, 0.0, 1.3, 0.01),
                            "t_est");
    files.push_back(initial_file);
    const fs::path final_file = dir / "final_t_histogram.csv";
    io::write_histogram_csv(final_file, histogram_of(report.final_t, 0.0, 1.3, 0.01),
                            "t_est");
    files.push_back(final_file);
    return files;
}

}  // namespace

RunResult run_experiment(const ConfigMap& config, bool quick, ExecMode exec) {
    auto diags = validate_config_map(config);
    if (!diags.empty()) throw ConfigError(std::move(diags));

    ExperimentConfig e = build_experiment(config);
    if (quick) {
        e.trials = std::max(1, e.trials / 10);
        e.campaign.trials = e.trials;
    }

    fs::create_directories(e.output_dir);
    std::vector<fs::path> files;
    switch (e.kind) {
        case ExperimentKind::Spectrum: files = run_spectrum(e, e.output_dir); break;
        case ExperimentKind::Histogram: files = run_histogram(e, e.output_dir); break;
        case ExperimentKind::Traces: files = run_traces(e, e.output_dir); break;
        case ExperimentKind::Collisions:
            files = run_collisions(e, e.output_dir, exec);
            break;
        case ExperimentKind::Adaptive: files = run_adaptive(e, e.output_dir, exec); break;
    }

    // Manifest: config round-trip, content hash, and a checksum for every
    // artifact. Timestamps live in a separate field so manifests compare
    // equal across reruns.
    json manifest;
    json config_json;
    for (const auto& [section, keys] : config) {
        json s;
        for (const auto& [key, value] : keys) s[key] = value;
        config_json[section] = s;
    }
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(config_hash(config)));
    manifest["config"] = config_json;
    manifest["config_hash"] = hash_hex;
    manifest["seed"] = e.seed;
    manifest["version"] = kVersion;
    manifest["quick"] = quick;
    json file_list = json::array();
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        char sum_hex[32];
        std::snprintf(sum_hex, sizeof(sum_hex), "%016llx",
                      static_cast<unsigned long long>(io::fnv1a_file(file)));
        file_list.push_back(json{{"name", file.filename().string()},
                                 {"bytes", fs::file_size(file)},
                                 {"fnv1a", sum_hex}});
    }
    manifest["files"] = file_list;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    manifest["created_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(now).count();

    RunResult result;
    result.files = files;
    result.manifest_path = e.output_dir / "manifest.json";
    write_json(result.manifest_path, manifest);
    return result;
}

RunResult run_experiment(const std::filesystem::path& config_path, bool quick,
                         ExecMode exec) {
    return run_experiment(load_config(config_path), quick, exec);
}

}  // namespace cavsim::harness
