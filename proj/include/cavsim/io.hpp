// File formats.
//
// Trace:   CSV `t_start_us,photons,t_est` preceded by one `#`-prefixed
//          JSON metadata line carrying the full config and seed.
// Events:  JSON lines, one event per line.
// Spectra: CSV `n_atoms,x,transmission,sigma`.

#ifndef CAVSIM_IO_HPP
#define CAVSIM_IO_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cavsim/analysis.hpp"
#include "cavsim/cavity.hpp"
#include "cavsim/controller.hpp"
#include "cavsim/dynamics.hpp"

namespace cavsim::io {

nlohmann::json to_json(const core::CavityConfig& cfg);
nlohmann::json to_json(const sim::SimParams& params);
core::CavityConfig cavity_from_json(const nlohmann::json& j);
sim::SimParams sim_params_from_json(const nlohmann::json& j);

void write_trace_csv(const std::filesystem::path& path, const sim::Trace& trace);
sim::Trace read_trace_csv(const std::filesystem::path& path);

void write_truth_events_jsonl(const std::filesystem::path& path,
                              std::span<const sim::TruthEvent> events);
void write_detected_events_jsonl(const std::filesystem::path& path,
                                 std::span<const analysis::DetectedEvent> events);

void write_spectrum_csv(const std::filesystem::path& path,
                        std::span<const core::SpectrumPoint> points);
std::vector<core::SpectrumPoint> read_spectrum_csv(const std::filesystem::path& path);

void write_histogram_csv(const std::filesystem::path& path, const analysis::Histogram& hist,
                         const std::string& value_name);

nlohmann::json to_json(const control::TrialRecord& record);
void write_trial_records_jsonl(const std::filesystem::path& path,
                               std::span<const control::TrialRecord> records);

// FNV-1a checksum of a file's bytes, used by the manifest.
std::uint64_t fnv1a_file(const std::filesystem::path& path);

}  // namespace cavsim::io

#endif  // CAVSIM_IO_HPP
