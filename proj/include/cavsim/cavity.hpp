// Dispersive cavity transmission model and the cooperativity fitter.
//
// The transmission of a probe through the cavity with n_eff effective
// coupled atoms is
//
//   T = 1 / [ (1 + n_eff*eta/(1+y^2))^2 + (x - n_eff*eta*y/(1+y^2))^2 ]
//
// with x the probe-cavity detuning in half cavity linewidths and y the
// probe-atom detuning in half atomic linewidths. n_eff generalizes the
// integer atom number to N times a mean per-atom coupling factor, so
// heated or displaced atoms reduce coupling continuously.

#ifndef CAVSIM_CAVITY_HPP
#define CAVSIM_CAVITY_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cavsim::core {

struct CavityConfig {
    double eta = 21.0;                      // single-atom cooperativity
    double gamma_hz = 5.2e6;                // atomic linewidth Gamma/(2*pi)
    double kappa_hz = 37e3;                 // cavity linewidth kappa/(2*pi)
    double delta_ca_hz = 0.0;               // cavity-atom detuning Delta/(2*pi), signed
    double delta_pc_hz = 0.0;               // probe-cavity detuning delta/(2*pi), signed
    double photons_per_bin_empty = 1000.0;  // mean detected photons per bin at T = 1
    double bin_us = 100.0;                  // detection bin length

    // Normalized detunings are derived, never stored. Varying the probe
    // moves both x and y; the delta contribution to y is tiny but kept.
    double x() const { return 2.0 * delta_pc_hz / kappa_hz; }
    double y() const { return y_at_probe(delta_pc_hz); }
    double y_at_probe(double probe_cavity_hz) const {
        return 2.0 * (delta_ca_hz + probe_cavity_hz) / gamma_hz;
    }
    // Probe-cavity detuning in Hz for a given normalized x.
    double probe_hz_for_x(double x_value) const { return 0.5 * x_value * kappa_hz; }

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct SpectrumPoint {
    int n_atoms = 0;
    double x = 0.0;
    double transmission = 1.0;
    double sigma = 0.0;  // 0 means unweighted / noiseless
};

// Dispersive transmission. Throws std::domain_error on eta <= 0 or n_eff < 0.
double transmission(double n_eff, double x, double y, double eta);

// Transmission at the config's operating point.
double transmission_at(const CavityConfig& cfg, double n_eff);

// Atom-induced shift of the cavity resonance in Hz: the x-position of the
// transmission maximum, (kappa/2) * n * eta * y / (1 + y^2), in linear
// frequency. Sign follows the sign of y.
double dispersive_shift_hz(int n, const CavityConfig& cfg);

// Noiseless transmission over an x grid; y is recomputed per point.
std::vector<SpectrumPoint> spectrum(int n, const CavityConfig& cfg,
                                    std::span<const double> x_grid);

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : FitError {
    using FitError::FitError;
};
struct DegenerateData : FitError {
    using FitError::FitError;
};

struct FitOptions {
    bool fit_kappa = false;     // by default only eta is free
    int max_iterations = 200;
    double rel_tol = 1e-10;     // relative residual change
    double step_tol = 1e-12;    // step norm
};

struct CooperativityFit {
    double eta = 0.0;
    double eta_stderr = 0.0;
    double kappa_hz = 0.0;      // echoes the config unless fit_kappa
    int iterations = 0;
    double residual = 0.0;      // final sum of squared weighted residuals
};

// Single shared eta fitted simultaneously over all points (Gamma, kappa,
// Delta fixed from cfg). Damped least squares: step rejection on residual
// increase, damping x10 on reject, /10 on accept, initialized from a
// coarse grid scan of eta in [1, 100]. Points with sigma > 0 are weighted
// by 1/sigma.
CooperativityFit fit_cooperativity(std::span<const SpectrumPoint> points,
                                   const CavityConfig& cfg, FitOptions opts = {});

}  // namespace cavsim::core

#endif  // CAVSIM_CAVITY_HPP
