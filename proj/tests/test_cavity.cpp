#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "cavsim/cavity.hpp"
#include "test_oracle.hpp"

using namespace cavsim;

namespace {

core::CavityConfig config_at_mhz(double delta_ca_mhz) {
    core::CavityConfig cfg;
    cfg.delta_ca_hz = delta_ca_mhz * 1e6;
    return cfg;
}

}  // namespace

TEST_CASE("transmission matches frozen oracle values") {
    // Frozen from the independent one-line oracle at the two operating
    // points (Delta/2pi = +107 MHz and -50 MHz, delta = 0).
    const double y107 = test_oracle::y_for_delta_mhz(107.0);
    CHECK(core::transmission(0.0, 0.0, y107, 21.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(core::transmission(1.0, 0.0, y107, 21.0) ==
          doctest::Approx(0.7782001571).epsilon(1e-9));
    CHECK(core::transmission(2.0, 0.0, y107, 21.0) ==
          doctest::Approx(0.4783549856).epsilon(1e-9));
    CHECK(core::transmission(3.0, 0.0, y107, 21.0) ==
          doctest::Approx(0.2927020213).epsilon(1e-9));

    const double y50 = test_oracle::y_for_delta_mhz(-50.0);
    const double x_peak = 21.0 * y50 / (1.0 + y50 * y50);
    CHECK(x_peak == doctest::Approx(-1.0890551948).epsilon(1e-9));
    CHECK(core::transmission(1.0, x_peak, y50, 21.0) ==
          doctest::Approx(0.8956811008).epsilon(1e-9));
}

TEST_CASE("transmission equals the oracle over a randomized grid") {
    std::mt19937_64 rng(20240517);
    std::uniform_real_distribution<double> un(0.0, 4.0);
    std::uniform_real_distribution<double> ux(-20.0, 20.0);
    std::uniform_real_distribution<double> uy(-60.0, 60.0);
    std::uniform_real_distribution<double> ueta(1.0, 50.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double n = un(rng);
        const double x = ux(rng);
        const double y = uy(rng);
        const double eta = ueta(rng);
        const double diff =
            std::fabs(core::transmission(n, x, y, eta) - test_oracle::transmission(n, x, y, eta));
        worst = std::max(worst, diff);
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("transmission domain errors") {
    CHECK_THROWS_AS(core::transmission(1.0, 0.0, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(core::transmission(1.0, 0.0, 1.0, -3.0), std::domain_error);
    CHECK_THROWS_AS(core::transmission(-0.1, 0.0, 1.0, 21.0), std::domain_error);
}

TEST_CASE("transmission is 1 iff empty cavity on resonance") {
    CHECK(core::transmission(0.0, 0.0, 41.15, 21.0) == doctest::Approx(1.0));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> un(0.01, 4.0);
    std::uniform_real_distribution<double> ux(-10.0, 10.0);
    std::uniform_real_distribution<double> uy(-50.0, 50.0);
    for (int i = 0; i < 2000; ++i) {
        const double t = core::transmission(un(rng), ux(rng), uy(rng), 21.0);
        CHECK(t > 0.0);
        CHECK(t < 1.0);
    }
    // n_eff = 0 off resonance is still below 1.
    CHECK(core::transmission(0.0, 0.5, 3.0, 21.0) < 1.0);
}

TEST_CASE("transmission strictly decreases with n_eff at x = 0") {
    const double y = test_oracle::y_for_delta_mhz(107.0);
    double prev = core::transmission(0.0, 0.0, y, 21.0);
    for (double n = 0.1; n <= 4.0; n += 0.1) {
        const double t = core::transmission(n, 0.0, y, 21.0);
        CHECK(t < prev);
        prev = t;
    }
}

TEST_CASE("sign-flip symmetry in (x, y)") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> un(0.0, 4.0);
    std::uniform_real_distribution<double> ux(-15.0, 15.0);
    std::uniform_real_distribution<double> uy(-50.0, 50.0);
    for (int i = 0; i < 2000; ++i) {
        const double n = un(rng);
        const double x = ux(rng);
        const double y = uy(rng);
        CHECK(core::transmission(n, x, y, 21.0) ==
              doctest::Approx(core::transmission(n, -x, -y, 21.0)).epsilon(1e-14));
    }
}

TEST_CASE("peak location and height match the closed forms") {
    for (double n : {1.0, 2.0, 3.0}) {
        for (double delta_mhz : {-50.0, 107.0}) {
            const double y = test_oracle::y_for_delta_mhz(delta_mhz);
            const auto peak = test_oracle::scan_peak(n, y, 21.0, -15.0, 15.0, 1e-4);
            const double x_expect = n * 21.0 * y / (1.0 + y * y);
            const double t_expect = 1.0 / std::pow(1.0 + n * 21.0 / (1.0 + y * y), 2.0);
            CHECK(peak.x == doctest::Approx(x_expect).epsilon(1e-3));
            CHECK(peak.t == doctest::Approx(t_expect).epsilon(1e-6));
        }
    }
}

TEST_CASE("dispersive shift: zero, single-atom value, linearity") {
    auto cfg = config_at_mhz(-50.0);
    CHECK(core::dispersive_shift_hz(0, cfg) == 0.0);
    // argmax of the transmission over x (dense scan) times kappa/2: -20.15 kHz.
    const double shift1 = core::dispersive_shift_hz(1, cfg);
    CHECK(shift1 == doctest::Approx(-20147.5).epsilon(5e-3));
    CHECK(core::dispersive_shift_hz(2, cfg) == doctest::Approx(2.0 * shift1).epsilon(1e-12));
    // Brute-force cross-check against the scanned peak position.
    const double y = cfg.y();
    const auto peak = test_oracle::scan_peak(1.0, y, cfg.eta, -5.0, 5.0, 1e-5);
    CHECK(shift1 == doctest::Approx(0.5 * cfg.kappa_hz * peak.x).epsilon(1e-4));
}

TEST_CASE("spectrum: empty cavity is the bare Lorentzian") {
    auto cfg = config_at_mhz(107.0);
    const double grid[] = {-2.0, 0.0, 2.0};
    const auto pts = core::spectrum(0, cfg, grid);
    REQUIRE(pts.size() == 3);
    CHECK(pts[0].transmission == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(pts[1].transmission == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pts[2].transmission == doctest::Approx(0.2).epsilon(1e-9));
}

namespace {

// Independent scan of the spectrum maximum with y following the probe:
// y(x) = 2 (Delta + x kappa/2) / Gamma.
test_oracle::Peak scan_spectrum_peak(int n, const core::CavityConfig& cfg, double x_lo,
                                     double x_hi) {
    test_oracle::Peak best{x_lo, 0.0};
    for (double x = x_lo; x <= x_hi; x += 1e-4) {
        const double y = 2.0 * (cfg.delta_ca_hz + 0.5 * x * cfg.kappa_hz) / cfg.gamma_hz;
        const double t = test_oracle::transmission(n, x, y, cfg.eta);
        if (t > best.t) best = {x, t};
    }
    return best;
}

}  // namespace

TEST_CASE("spectrum: single-atom curve peaks at the shifted resonance") {
    auto cfg = config_at_mhz(-50.0);
    std::vector<double> grid;
    for (double x = -4.0; x <= 2.0; x += 0.001) grid.push_back(x);
    const auto pts = core::spectrum(1, cfg, grid);
    double best_t = 0.0;
    double best_x = 0.0;
    for (const auto& p : pts) {
        if (p.transmission > best_t) {
            best_t = p.transmission;
            best_x = p.x;
        }
    }
    const auto expect = scan_spectrum_peak(1, cfg, -4.0, 2.0);
    CHECK(best_t == doctest::Approx(expect.t).epsilon(1e-6));
    CHECK(best_x == doctest::Approx(expect.x).epsilon(2e-3));
    // The fixed-y closed form remains a close bracket (frozen oracle value).
    CHECK(best_t == doctest::Approx(0.8956811008).epsilon(3e-4));
    CHECK(best_x == doctest::Approx(-1.089).epsilon(2e-3));
}

TEST_CASE("spectrum: three-atom peak height") {
    auto cfg = config_at_mhz(-50.0);
    std::vector<double> grid;
    for (double x = -8.0; x <= 2.0; x += 0.001) grid.push_back(x);
    const auto pts = core::spectrum(3, cfg, grid);
    double best = 0.0;
    for (const auto& p : pts) best = std::max(best, p.transmission);
    const auto expect = scan_spectrum_peak(3, cfg, -8.0, 2.0);
    CHECK(best == doctest::Approx(expect.t).epsilon(1e-6));
    // Fixed-y closed form 1/(1 + 3*eta/(1+y^2))^2 = 0.73065; the probe's
    // contribution to y raises the peak by ~7e-4.
    CHECK(best == doctest::Approx(0.7306476713).epsilon(2e-3));
}

TEST_CASE("fit recovers eta exactly on noiseless spectra") {
    auto cfg = config_at_mhz(-50.0);
    std::vector<double> grid;
    for (double x = -8.0; x <= 4.0; x += 0.25) grid.push_back(x);
    std::vector<core::SpectrumPoint> all;
    for (int n = 0; n <= 3; ++n) {
        const auto pts = core::spectrum(n, cfg, grid);
        all.insert(all.end(), pts.begin(), pts.end());
    }
    const auto fit = core::fit_cooperativity(all, cfg);
    CHECK(fit.eta == doctest::Approx(21.0).epsilon(1e-6));
    CHECK(fit.residual < 1e-12);
}

TEST_CASE("fit round-trips random eta from generated spectra") {
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> ueta(5.0, 50.0);
    std::vector<double> grid;
    for (double x = -8.0; x <= 4.0; x += 0.25) grid.push_back(x);
    for (int rep = 0; rep < 10; ++rep) {
        auto cfg = config_at_mhz(-50.0);
        cfg.eta = ueta(rng);
        std::vector<core::SpectrumPoint> all;
        for (int n = 0; n <= 3; ++n) {
            const auto pts = core::spectrum(n, cfg, grid);
            all.insert(all.end(), pts.begin(), pts.end());
        }
        auto fit_cfg = cfg;
        fit_cfg.eta = 21.0;  // starting config need not match
        const auto fit = core::fit_cooperativity(all, fit_cfg);
        CHECK(fit.eta == doctest::Approx(cfg.eta).epsilon(1e-6));
    }
}

TEST_CASE("fit error taxonomy") {
    auto cfg = config_at_mhz(-50.0);
    std::vector<double> grid;
    for (double x = -4.0; x <= 4.0; x += 0.5) grid.push_back(x);
    // All points at n = 0 carry no information about eta.
    const auto empty = core::spectrum(0, cfg, grid);
    CHECK_THROWS_AS(core::fit_cooperativity(empty, cfg), core::DegenerateData);
    // A single atom number is degenerate too (the fit needs a baseline).
    const auto one = core::spectrum(1, cfg, grid);
    CHECK_THROWS_AS(core::fit_cooperativity(one, cfg), core::DegenerateData);
}

TEST_CASE("config validation names the offending field") {
    core::CavityConfig cfg;
    cfg.kappa_hz = -1.0;
    try {
        cfg.validate();
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& ex) {
        CHECK(std::string(ex.what()).find("kappa_hz") != std::string::npos);
    }
}
