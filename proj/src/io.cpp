#include "cavsim/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cavsim::io {

using nlohmann::json;

namespace {

void fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(path, "cannot open for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open for reading");
    return in;
}

// Fixed-format double so that identical runs produce identical bytes.
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

json to_json(const core::CavityConfig& cfg) {
    return json{{"eta", cfg.eta},
                {"gamma_hz", cfg.gamma_hz},
                {"kappa_hz", cfg.kappa_hz},
                {"delta_ca_hz", cfg.delta_ca_hz},
                {"delta_pc_hz", cfg.delta_pc_hz},
                {"photons_per_bin_empty", cfg.photons_per_bin_empty},
                {"bin_us", cfg.bin_us}};
}

json to_json(const sim::SimParams& p) {
    return json{{"pump_tau_ms", p.pump_tau_ms},
                {"pump_window_ms", p.pump_window_ms},
                {"initial_coupling", p.initial_coupling},
                {"collision_fast_fraction", p.collision_fast_fraction},
                {"collision_fast_tau_us", p.collision_fast_tau_us},
                {"collision_onset_us", p.collision_onset_us},
                {"collision_slow_tau_ms", p.collision_slow_tau_ms},
                {"p_both_lost", p.p_both_lost},
                {"p_one_lost", p.p_one_lost},
                {"p_both_heated", p.p_both_heated},
                {"heated_coupling", p.heated_coupling},
                {"recool_tau_ms", p.recool_tau_ms},
                {"loss_tau_ms_cooling", p.loss_tau_ms_cooling},
                {"loss_tau_ms_heating", p.loss_tau_ms_heating},
                {"repump_rate_per_ms", p.repump_rate_per_ms},
                {"depump_rate_per_ms", p.depump_rate_per_ms},
                {"tick_us", p.tick_us},
                {"repump_light_on", p.repump_light_on},
                {"depump_light_on", p.depump_light_on},
                {"collisions_on", p.collisions_on},
                {"background_loss_on", p.background_loss_on},
                {"pulsed_heating_loss_tau_ms", p.pulsed_heating_loss_tau_ms},
                {"pulsed_collision_scale", p.pulsed_collision_scale},
                {"hot_pulsed_loss_tau_ms", p.hot_pulsed_loss_tau_ms},
                {"push_p_eject", p.push_p_eject},
                {"push_p_leak", p.push_p_leak},
                {"push_survivor_coupling_min", p.push_survivor_coupling_min}};
}

core::CavityConfig cavity_from_json(const json& j) {
    core::CavityConfig cfg;
    cfg.eta = j.value("eta", cfg.eta);
    cfg.gamma_hz = j.value("gamma_hz", cfg.gamma_hz);
    cfg.kappa_hz = j.value("kappa_hz", cfg.kappa_hz);
    cfg.delta_ca_hz = j.value("delta_ca_hz", cfg.delta_ca_hz);
    cfg.delta_pc_hz = j.value("delta_pc_hz", cfg.delta_pc_hz);
    cfg.photons_per_bin_empty = j.value("photons_per_bin_empty", cfg.photons_per_bin_empty);
    cfg.bin_us = j.value("bin_us", cfg.bin_us);
    return cfg;
}

sim::SimParams sim_params_from_json(const json& j) {
    sim::SimParams p;
    p.pump_tau_ms = j.value("pump_tau_ms", p.pump_tau_ms);
    p.pump_window_ms = j.value("pump_window_ms", p.pump_window_ms);
    p.initial_coupling = j.value("initial_coupling", p.initial_coupling);
    p.collision_fast_fraction = j.value("collision_fast_fraction", p.collision_fast_fraction);
    p.collision_fast_tau_us = j.value("collision_fast_tau_us", p.collision_fast_tau_us);
    p.collision_onset_us = j.value("collision_onset_us", p.collision_onset_us);
    p.collision_slow_tau_ms = j.value("collision_slow_tau_ms", p.collision_slow_tau_ms);
    p.p_both_lost = j.value("p_both_lost", p.p_both_lost);
    p.p_one_lost = j.value("p_one_lost", p.p_one_lost);
    p.p_both_heated = j.value("p_both_heated", p.p_both_heated);
    p.heated_coupling = j.value("heated_coupling", p.heated_coupling);
    p.recool_tau_ms = j.value("recool_tau_ms", p.recool_tau_ms);
    p.loss_tau_ms_cooling = j.value("loss_tau_ms_cooling", p.loss_tau_ms_cooling);
    p.loss_tau_ms_heating = j.value("loss_tau_ms_heating", p.loss_tau_ms_heating);
    p.repump_rate_per_ms = j.value("repump_rate_per_ms", p.repump_rate_per_ms);
    p.depump_rate_per_ms = j.value("depump_rate_per_ms", p.depump_rate_per_ms);
    p.tick_us = j.value("tick_us", p.tick_us);
    p.repump_light_on = j.value("repump_light_on", p.repump_light_on);
    p.depump_light_on = j.value("depump_light_on", p.depump_light_on);
    p.collisions_on = j.value("collisions_on", p.collisions_on);
    p.background_loss_on = j.value("background_loss_on", p.background_loss_on);
    p.pulsed_heating_loss_tau_ms =
        j.value("pulsed_heating_loss_tau_ms", p.pulsed_heating_loss_tau_ms);
    p.pulsed_collision_scale = j.value("pulsed_collision_scale", p.pulsed_collision_scale);
    p.hot_pulsed_loss_tau_ms = j.value("hot_pulsed_loss_tau_ms", p.hot_pulsed_loss_tau_ms);
    p.push_p_eject = j.value("push_p_eject", p.push_p_eject);
    p.push_p_leak = j.value("push_p_leak", p.push_p_leak);
    p.push_survivor_coupling_min =
        j.value("push_survivor_coupling_min", p.push_survivor_coupling_min);
    return p;
}

void write_trace_csv(const std::filesystem::path& path, const sim::Trace& trace) {
    auto out = open_out(path);
    json meta{{"cavity", to_json(trace.cavity)},
              {"sim", to_json(trace.params)},
              {"seed", trace.seed}};
    out << "# " << meta.dump() << "\n";
    out << "t_start_us,photons,t_est\n";
    for (const auto& bin : trace.bins) {
        out << bin.t_start_us << ',' << bin.photons << ',' << fmt(bin.t_est) << "\n";
    }
}

sim::Trace read_trace_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    sim::Trace trace;
    std::string line;
    if (!std::getline(in, line)) fail(path, "empty trace file");
    if (line.rfind("# ", 0) == 0) {
        const json meta = json::parse(line.substr(2));
        trace.cavity = cavity_from_json(meta.at("cavity"));
        trace.params = sim_params_from_json(meta.at("sim"));
        trace.seed = meta.value("seed", 0ull);
        if (!std::getline(in, line)) fail(path, "missing header");
    }
    if (line != "t_start_us,photons,t_est") fail(path, "unexpected trace header: " + line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        sim::TraceBin bin;
        if (std::sscanf(line.c_str(), "%" SCNd64 ",%" SCNd64 ",%lf", &bin.t_start_us,
                        &bin.photons, &bin.t_est) != 3) {
            fail(path, "bad trace row: " + line);
        }
        trace.bins.push_back(bin);
    }
    return trace;
}

void write_truth_events_jsonl(const std::filesystem::path& path,
                              std::span<const sim::TruthEvent> events) {
    auto out = open_out(path);
    for (const auto& ev : events) {
        json j{{"t_us", ev.t_us},
               {"kind", sim::to_string(ev.kind)},
               {"atoms_before", ev.atoms_before},
               {"atoms_after", ev.atoms_after}};
        if (ev.outcome) j["outcome"] = sim::to_string(*ev.outcome);
        out << j.dump() << "\n";
    }
}

void write_detected_events_jsonl(const std::filesystem::path& path,
                                 std::span<const analysis::DetectedEvent> events) {
    auto out = open_out(path);
    for (const auto& ev : events) {
        json j{{"t_us", ev.t_us},
               {"kind", analysis::to_string(ev.kind)},
               {"delta_t", ev.delta_t}};
        if (ev.recovered_coupling) j["recovered_coupling"] = *ev.recovered_coupling;
        out << j.dump() << "\n";
    }
}

void write_spectrum_csv(const std::filesystem::path& path,
                        std::span<const core::SpectrumPoint> points) {
    auto out = open_out(path);
    out << "n_atoms,x,transmission,sigma\n";
    for (const auto& p : points) {
        out << p.n_atoms << ',' << fmt(p.x) << ',' << fmt(p.transmission) << ','
            << fmt(p.sigma) << "\n";
    }
}

std::vector<core::SpectrumPoint> read_spectrum_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) fail(path, "empty spectrum file");
    if (line != "n_atoms,x,transmission,sigma") {
        fail(path, "unexpected spectrum header: " + line);
    }
    std::vector<core::SpectrumPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        core::SpectrumPoint p;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &p.n_atoms, &p.x, &p.transmission,
                        &p.sigma) != 4) {
            fail(path, "bad spectrum row: " + line);
        }
        points.push_back(p);
    }
    return points;
}

void write_histogram_csv(const std::filesystem::path& path, const analysis::Histogram& hist,
                         const std::string& value_name) {
    auto out = open_out(path);
    out << value_name << ",count\n";
    for (std::size_t i = 0; i < hist.counts.size(); ++i) {
        out << fmt(hist.bin_center(i)) << ',' << hist.counts[i] << "\n";
    }
}

json to_json(const control::TrialRecord& r) {
    json j{{"postselected", r.postselected},
           {"success", r.success},
           {"n_initial", r.n_initial},
           {"n_final", r.n_final},
           {"iterations_used", r.iterations_used},
           {"wall_time_ms", r.wall_time_ms},
           {"initial_t", r.initial_t},
           {"final_t", r.final_t}};
    if (r.failure_mode) j["failure_mode"] = control::to_string(*r.failure_mode);
    return j;
}

void write_trial_records_jsonl(const std::filesystem::path& path,
                               std::span<const control::TrialRecord> records) {
    auto out = open_out(path);
    for (const auto& r : records) out << to_json(r).dump() << "\n";
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open for checksum");
    std::uint64_t hash = 0xCBF29CE484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const auto got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001B3ull;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return hash;
}

}  // namespace cavsim::io
