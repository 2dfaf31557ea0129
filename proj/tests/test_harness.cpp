#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cavsim/harness.hpp"
#include "cavsim/io.hpp"

using namespace cavsim;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("cavsim_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

harness::ConfigMap quick_traces_config(const fs::path& out_dir) {
    harness::ConfigMap config;
    config["experiment"]["kind"] = "traces";
    config["experiment"]["seed"] = "31337";
    config["experiment"]["duration_ms"] = "20";
    config["experiment"]["output_dir"] = out_dir.string();
    config["cavity"]["delta_ca_hz"] = "107e6";
    return config;
}

}  // namespace

TEST_CASE("config parser: sections, comments, trimming") {
    const auto config = harness::parse_config_text(
        "# top comment\n"
        "[experiment]\n"
        "kind = collisions   ; inline comment\n"
        "seed=42\n"
        "\n"
        "[cavity]\n"
        "  eta  =  21.0  \n");
    CHECK(config.at("experiment").at("kind") == "collisions");
    CHECK(config.at("experiment").at("seed") == "42");
    CHECK(config.at("cavity").at("eta") == "21.0");
}

TEST_CASE("shipped configs validate cleanly") {
    int seen = 0;
    for (const auto& entry : fs::directory_iterator(CAVSIM_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        ++seen;
        const auto diags = harness::validate_config(entry.path());
        INFO(entry.path().string());
        for (const auto& d : diags) INFO(d);
        CHECK(diags.empty());
    }
    CHECK(seen >= 6);
}

TEST_CASE("validation reports every violation, naming the offending key") {
    auto config = harness::parse_config_text(
        "[experiment]\nkind = collisions\nseed = 1\n"
        "[cavity]\nkappa_hz = -5\n"
        "[sim]\np_both_lost = 0.6\n");  // simplex now sums to 1.1
    const auto diags = harness::validate_config_map(config);
    REQUIRE(diags.size() == 2);
    bool saw_kappa = false;
    bool saw_simplex = false;
    for (const auto& d : diags) {
        if (d.find("kappa_hz") != std::string::npos) saw_kappa = true;
        if (d.find("p_both_lost") != std::string::npos &&
            d.find("sum to 1") != std::string::npos) {
            saw_simplex = true;
        }
    }
    CHECK(saw_kappa);
    CHECK(saw_simplex);
}

TEST_CASE("validation catches missing seed, unknown keys, bad numbers") {
    auto config = harness::parse_config_text(
        "[experiment]\nkind = warp\n"
        "[cavity]\neta = fast\nbogus_key = 1\n");
    const auto diags = harness::validate_config_map(config);
    auto contains = [&](const std::string& needle) {
        for (const auto& d : diags) {
            if (d.find(needle) != std::string::npos) return true;
        }
        return false;
    };
    CHECK(contains("experiment.kind"));
    CHECK(contains("experiment.seed"));
    CHECK(contains("cavity.eta"));
    CHECK(contains("cavity.bogus_key"));
}

TEST_CASE("environment variables override config keys") {
    ::setenv("CAVSIM_CAVITY_ETA", "23.5", 1);
    auto config = harness::parse_config_text("[experiment]\nkind = spectrum\nseed = 7\n");
    harness::apply_env_overrides(config);
    ::unsetenv("CAVSIM_CAVITY_ETA");
    CHECK(config.at("cavity").at("eta") == "23.5");
}

TEST_CASE("run_experiment on an invalid config throws with diagnostics") {
    auto config = harness::parse_config_text("[experiment]\nkind = nope\nseed = 1\n");
    CHECK_THROWS_AS(harness::run_experiment(config), harness::ConfigError);
}

TEST_CASE("identical configs reproduce byte-identical artifacts and manifests") {
    const auto dir_a = temp_dir("repro_a");
    const auto dir_b = temp_dir("repro_b");
    const auto result_a = harness::run_experiment(quick_traces_config(dir_a));
    const auto result_b = harness::run_experiment(quick_traces_config(dir_b));
    REQUIRE(result_a.files.size() == result_b.files.size());
    for (std::size_t i = 0; i < result_a.files.size(); ++i) {
        CHECK(result_a.files[i].filename() == result_b.files[i].filename());
        CHECK(read_file(result_a.files[i]) == read_file(result_b.files[i]));
    }
    // Manifests agree except for the timestamp (and the differing paths).
    auto manifest_a = nlohmann::json::parse(read_file(result_a.manifest_path));
    auto manifest_b = nlohmann::json::parse(read_file(result_b.manifest_path));
    manifest_a.erase("created_unix_ms");
    manifest_b.erase("created_unix_ms");
    manifest_a["config"]["experiment"].erase("output_dir");
    manifest_b["config"]["experiment"].erase("output_dir");
    manifest_a.erase("config_hash");
    manifest_b.erase("config_hash");
    CHECK(manifest_a == manifest_b);
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("every output file is referenced by the manifest; no orphans") {
    const auto dir = temp_dir("orphans");
    const auto result = harness::run_experiment(quick_traces_config(dir));
    const auto manifest = nlohmann::json::parse(read_file(result.manifest_path));
    std::set<std::string> listed;
    for (const auto& f : manifest.at("files")) {
        listed.insert(f.at("name").get<std::string>());
    }
    std::set<std::string> on_disk;
    for (const auto& entry : fs::directory_iterator(dir)) {
        on_disk.insert(entry.path().filename().string());
    }
    listed.insert("manifest.json");
    CHECK(on_disk == listed);
    // And the checksums in the manifest match the files.
    for (const auto& f : manifest.at("files")) {
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(
                          io::fnv1a_file(dir / f.at("name").get<std::string>())));
        CHECK(f.at("fnv1a").get<std::string>() == hex);
    }
    fs::remove_all(dir);
}

TEST_CASE("trace CSV round-trips bins and configuration") {
    const auto dir = temp_dir("trace_roundtrip");
    core::CavityConfig cfg;
    cfg.delta_ca_hz = 107e6;
    sim::SimParams params;
    const auto result = sim::simulate(2, cfg, params, 5.0, 99);
    const auto path = dir / "trace.csv";
    io::write_trace_csv(path, result.trace);
    const auto loaded = io::read_trace_csv(path);
    REQUIRE(loaded.bins.size() == result.trace.bins.size());
    for (std::size_t i = 0; i < loaded.bins.size(); ++i) {
        CHECK(loaded.bins[i].t_start_us == result.trace.bins[i].t_start_us);
        CHECK(loaded.bins[i].photons == result.trace.bins[i].photons);
    }
    CHECK(loaded.cavity.delta_ca_hz == cfg.delta_ca_hz);
    CHECK(loaded.params.tick_us == params.tick_us);
    CHECK(loaded.seed == 99);
    fs::remove_all(dir);
}

TEST_CASE("spectrum CSV round-trips") {
    const auto dir = temp_dir("spectrum_roundtrip");
    core::CavityConfig cfg;
    cfg.delta_ca_hz = -50e6;
    const double grid[] = {-2.0, -1.0, 0.0, 1.0};
    auto pts = core::spectrum(1, cfg, grid);
    const auto path = dir / "spec.csv";
    io::write_spectrum_csv(path, pts);
    const auto loaded = io::read_spectrum_csv(path);
    REQUIRE(loaded.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(loaded[i].n_atoms == pts[i].n_atoms);
        CHECK(loaded[i].x == doctest::Approx(pts[i].x));
        CHECK(loaded[i].transmission == doctest::Approx(pts[i].transmission).epsilon(1e-7));
    }
    fs::remove_all(dir);
}

TEST_CASE("unreadable config throws an I/O error") {
    CHECK_THROWS_AS(harness::validate_config("/nonexistent/cavsim.ini"), std::runtime_error);
}

TEST_CASE("spectrum experiment writes four spectra and a fit near eta = 21") {
    const auto dir = temp_dir("spectrum_exp");
    harness::ConfigMap config;
    config["experiment"]["kind"] = "spectrum";
    config["experiment"]["seed"] = "20240";
    config["experiment"]["output_dir"] = dir.string();
    config["cavity"]["delta_ca_hz"] = "-50e6";
    const auto result = harness::run_experiment(config);
    int spectra = 0;
    for (const auto& f : result.files) {
        if (f.filename().string().rfind("spectrum_n", 0) == 0) ++spectra;
    }
    CHECK(spectra == 4);
    const auto fit = nlohmann::json::parse(read_file(dir / "fit.json"));
    CHECK(std::fabs(fit.at("eta").get<double>() - 21.0) < 0.5);
    CHECK(fit.at("eta_stderr").get<double>() > 0.0);
    CHECK(fit.contains("iterations"));
    CHECK(fit.contains("residual"));
    fs::remove_all(dir);
}
