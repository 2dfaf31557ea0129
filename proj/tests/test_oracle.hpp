// Independent oracles used by the test suites. These deliberately avoid
// the library implementation: the transmission oracle is one line of
// direct arithmetic and the peak finder is a brute-force scan.

#ifndef CAVSIM_TEST_ORACLE_HPP
#define CAVSIM_TEST_ORACLE_HPP

#include <cmath>

namespace test_oracle {

inline double transmission(double n, double x, double y, double eta) {
    return 1.0 / (std::pow(1.0 + n * eta / (1.0 + y * y), 2.0) +
                  std::pow(x - n * eta * y / (1.0 + y * y), 2.0));
}

struct Peak {
    double x;
    double t;
};

// Dense scan for the transmission maximum over x.
inline Peak scan_peak(double n, double y, double eta, double x_lo, double x_hi,
                      double step = 1e-5) {
    Peak best{x_lo, 0.0};
    for (double x = x_lo; x <= x_hi; x += step) {
        const double t = transmission(n, x, y, eta);
        if (t > best.t) best = {x, t};
    }
    return best;
}

// Normalized probe-atom detuning at delta = 0 for a cavity-atom detuning
// given in MHz (Gamma/2pi = 5.2 MHz).
inline double y_for_delta_mhz(double delta_mhz, double gamma_mhz = 5.2) {
    return 2.0 * delta_mhz / gamma_mhz;
}

}  // namespace test_oracle

#endif  // CAVSIM_TEST_ORACLE_HPP
