#include "cavsim/cavity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cavsim::core {

void CavityConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string("cavity.") + name +
                                        " must be positive and finite");
        }
    };
    positive(eta, "eta");
    positive(gamma_hz, "gamma_hz");
    positive(kappa_hz, "kappa_hz");
    positive(photons_per_bin_empty, "photons_per_bin_empty");
    positive(bin_us, "bin_us");
    if (!std::isfinite(delta_ca_hz)) throw std::invalid_argument("cavity.delta_ca_hz must be finite");
    if (!std::isfinite(delta_pc_hz)) throw std::invalid_argument("cavity.delta_pc_hz must be finite");
}

double transmission(double n_eff, double x, double y, double eta) {
    if (!(eta > 0.0)) throw std::domain_error("transmission: eta must be > 0");
    if (n_eff < 0.0) throw std::domain_error("transmission: n_eff must be >= 0");
    const double lorentz = 1.0 / (1.0 + y * y);
    const double absorptive = 1.0 + n_eff * eta * lorentz;
    const double dispersive = x - n_eff * eta * y * lorentz;
    return 1.0 / (absorptive * absorptive + dispersive * dispersive);
}

double transmission_at(const CavityConfig& cfg, double n_eff) {
    return transmission(n_eff, cfg.x(), cfg.y(), cfg.eta);
}

double dispersive_shift_hz(int n, const CavityConfig& cfg) {
    cfg.validate();
    if (n < 0) throw std::domain_error("dispersive_shift_hz: n must be >= 0");
    const double y = cfg.y();
    return 0.5 * cfg.kappa_hz * static_cast<double>(n) * cfg.eta * y / (1.0 + y * y);
}

std::vector<SpectrumPoint> spectrum(int n, const CavityConfig& cfg,
                                    std::span<const double> x_grid) {
    cfg.validate();
    if (n < 0) throw std::domain_error("spectrum: n must be >= 0");
    if (x_grid.empty()) throw std::invalid_argument("spectrum: x_grid must be non-empty");
    std::vector<SpectrumPoint> out;
    out.reserve(x_grid.size());
    for (double x : x_grid) {
        if (!std::isfinite(x)) throw std::invalid_argument("spectrum: x_grid values must be finite");
        const double y = cfg.y_at_probe(cfg.probe_hz_for_x(x));
        SpectrumPoint p;
        p.n_atoms = n;
        p.x = x;
        p.transmission = transmission(static_cast<double>(n), x, y, cfg.eta);
        p.sigma = 0.0;
        out.push_back(p);
    }
    return out;
}

namespace {

// Weighted residual vector for a candidate (eta, kappa).
double sum_squared_residuals(std::span<const SpectrumPoint> pts, const CavityConfig& cfg,
                             double eta, double kappa_hz) {
    double ssr = 0.0;
    const double kappa_scale = cfg.kappa_hz / kappa_hz;
    for (const auto& p : pts) {
        // x values are normalized to the config kappa; re-express them in
        // units of the trial kappa so that the physical probe detuning is
        // unchanged when kappa is floated.
        const double x = p.x * kappa_scale;
        const double y = cfg.y_at_probe(0.5 * p.x * cfg.kappa_hz);
        const double model = transmission(static_cast<double>(p.n_atoms), x, y, eta);
        const double w = p.sigma > 0.0 ? 1.0 / p.sigma : 1.0;
        const double r = (model - p.transmission) * w;
        ssr += r * r;
    }
    return ssr;
}

}  // namespace

CooperativityFit fit_cooperativity(std::span<const SpectrumPoint> points,
                                   const CavityConfig& cfg, FitOptions opts) {
    cfg.validate();
    if (points.size() < 2) throw DegenerateData("fit_cooperativity: too few points");

    bool any_atoms = false;
    int min_n = std::numeric_limits<int>::max();
    int max_n = std::numeric_limits<int>::min();
    for (const auto& p : points) {
        if (p.n_atoms > 0) any_atoms = true;
        min_n = std::min(min_n, p.n_atoms);
        max_n = std::max(max_n, p.n_atoms);
    }
    if (!any_atoms) throw DegenerateData("fit_cooperativity: all points have n_atoms = 0");
    if (min_n == max_n) {
        throw DegenerateData("fit_cooperativity: need at least two distinct atom numbers");
    }

    const int n_params = opts.fit_kappa ? 2 : 1;

    // Coarse grid scan over eta for the starting point.
    double eta = 1.0;
    double best = std::numeric_limits<double>::infinity();
    for (double trial = 1.0; trial <= 100.0; trial += 0.5) {
        const double ssr = sum_squared_residuals(points, cfg, trial, cfg.kappa_hz);
        if (ssr < best) {
            best = ssr;
            eta = trial;
        }
    }

    double kappa = cfg.kappa_hz;
    double ssr = best;
    double damping = 1e-3;
    int iter = 0;
    bool converged = false;

    // Damped Gauss-Newton with numeric Jacobian; 1 or 2 parameters only.
    while (iter < opts.max_iterations) {
        ++iter;
        const double h_eta = 1e-6 * std::max(1.0, std::fabs(eta));
        const double h_kap = 1e-6 * std::max(1.0, std::fabs(kappa));

        // Accumulate J^T J and J^T r.
        double jtj[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
        double jtr[2] = {0.0, 0.0};
        const double kappa_scale = cfg.kappa_hz / kappa;
        for (const auto& p : points) {
            const double x = p.x * kappa_scale;
            const double y = cfg.y_at_probe(0.5 * p.x * cfg.kappa_hz);
            const double w = p.sigma > 0.0 ? 1.0 / p.sigma : 1.0;
            const double n = static_cast<double>(p.n_atoms);
            const double r = (transmission(n, x, y, eta) - p.transmission) * w;
            double grad[2];
            grad[0] = (transmission(n, x, y, eta + h_eta) -
                       transmission(n, x, y, eta - h_eta)) /
                      (2.0 * h_eta) * w;
            if (opts.fit_kappa) {
                const double xp = p.x * cfg.kappa_hz / (kappa + h_kap);
                const double xm = p.x * cfg.kappa_hz / (kappa - h_kap);
                grad[1] = (transmission(n, xp, y, eta) - transmission(n, xm, y, eta)) /
                          (2.0 * h_kap) * w;
            } else {
                grad[1] = 0.0;
            }
            for (int a = 0; a < n_params; ++a) {
                jtr[a] += grad[a] * r;
                for (int b = 0; b < n_params; ++b) jtj[a][b] += grad[a] * grad[b];
            }
        }

        // Solve (J^T J + damping * diag(J^T J)) step = -J^T r.
        double step[2] = {0.0, 0.0};
        if (n_params == 1) {
            const double denom = jtj[0][0] * (1.0 + damping);
            if (denom <= 0.0) break;
            step[0] = -jtr[0] / denom;
        } else {
            const double a00 = jtj[0][0] * (1.0 + damping);
            const double a11 = jtj[1][1] * (1.0 + damping);
            const double a01 = jtj[0][1];
            const double det = a00 * a11 - a01 * a01;
            if (det == 0.0) break;
            step[0] = (-jtr[0] * a11 + jtr[1] * a01) / det;
            step[1] = (-jtr[1] * a00 + jtr[0] * a01) / det;
        }

        const double eta_new = eta + step[0];
        const double kappa_new = kappa + step[1];
        double ssr_new = std::numeric_limits<double>::infinity();
        if (eta_new > 0.0 && kappa_new > 0.0) {
            ssr_new = sum_squared_residuals(points, cfg, eta_new, kappa_new);
        }

        const double step_norm = std::sqrt(step[0] * step[0] + step[1] * step[1]);
        if (ssr_new <= ssr) {
            const double rel_change = (ssr - ssr_new) / std::max(ssr, 1e-300);
            eta = eta_new;
            kappa = kappa_new;
            ssr = ssr_new;
            damping = std::max(damping / 10.0, 1e-12);
            if (rel_change < opts.rel_tol || step_norm < opts.step_tol) {
                converged = true;
                break;
            }
        } else {
            damping *= 10.0;
            if (step_norm < opts.step_tol) {
                converged = true;
                break;
            }
            if (damping > 1e12) {
                converged = true;  // stuck at a minimum to machine precision
                break;
            }
        }
    }
    if (!converged) {
        throw NoConvergence("fit_cooperativity: no convergence after " +
                            std::to_string(opts.max_iterations) + " iterations");
    }

    // Covariance from the local quadratic expansion of the residual.
    double jtj_final = 0.0;
    const double h_eta = 1e-6 * std::max(1.0, std::fabs(eta));
    for (const auto& p : points) {
        const double y = cfg.y_at_probe(0.5 * p.x * cfg.kappa_hz);
        const double x = p.x * cfg.kappa_hz / kappa;
        const double w = p.sigma > 0.0 ? 1.0 / p.sigma : 1.0;
        const double n = static_cast<double>(p.n_atoms);
        const double g = (transmission(n, x, y, eta + h_eta) -
                          transmission(n, x, y, eta - h_eta)) /
                         (2.0 * h_eta) * w;
        jtj_final += g * g;
    }
    const auto dof = static_cast<double>(points.size()) - n_params;
    double variance = 0.0;
    if (jtj_final > 0.0 && dof > 0.0) {
        variance = (ssr / dof) / jtj_final;
    }

    CooperativityFit fit;
    fit.eta = eta;
    fit.eta_stderr = std::sqrt(std::max(variance, 0.0));
    fit.kappa_hz = kappa;
    fit.iterations = iter;
    fit.residual = ssr;
    return fit;
}

}  // namespace cavsim::core
