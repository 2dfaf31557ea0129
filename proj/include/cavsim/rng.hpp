// Seeded random streams for deterministic Monte Carlo runs.
//
// Every stochastic process in a simulation draws from its own named
// sub-stream, so turning one process on or off never perturbs the draw
// sequence of another. All stream seeds derive from a single master seed
// through a documented counter scheme:
//
//   trial_seed(master, i)  = splitmix64(master + (i + 1) * GOLDEN)
//   stream_seed(trial, k)  = splitmix64(trial  + (k + 1) * GOLDEN)
//
// Distributions are implemented here rather than taken from <random> so
// that sequences do not depend on the standard-library implementation.

#ifndef CAVSIM_RNG_HPP
#define CAVSIM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace cavsim {

inline constexpr std::uint64_t kSeedGolden = 0x9E3779B97F4A7C15ull;

// One splitmix64 step; the standard way to expand a seed into
// decorrelated child seeds.
inline std::uint64_t splitmix64(std::uint64_t state) {
    std::uint64_t z = state + kSeedGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(base + (index + 1) * kSeedGolden);
}

// Named sub-stream tags. Order is part of the seeding scheme; append only.
enum class StreamTag : std::uint64_t {
    Photons = 0,
    Jumps = 1,
    Collisions = 2,
    Outcomes = 3,
    Loss = 4,
    Push = 5,
    Occupancy = 6,
    Heating = 7,
    Measure = 8,
    Noise = 9,
};

class RandomStream {
public:
    RandomStream() : engine_(0) {}
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Exponential with the given mean; never evaluates log(0).
    double exponential(double mean) { return -mean * std::log1p(-uniform()); }

    // Box-Muller, two uniforms per call.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Exact Poisson sampler: sequential search for small means, Hormann's
    // PTRS transformed rejection for mean >= 10.
    std::int64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 10.0) return poisson_small(mean);
        return poisson_ptrs(mean);
    }

private:
    std::int64_t poisson_small(double mean) {
        const double limit = std::exp(-mean);
        std::int64_t k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    std::int64_t poisson_ptrs(double mean) {
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::fabs(u);
            const auto k = static_cast<std::int64_t>(
                std::floor((2.0 * a / us + b) * u + mean + 0.43));
            if (us >= 0.07 && v <= vr) return k;
            if (k < 0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
                k * loglam - mean - std::lgamma(static_cast<double>(k) + 1.0)) {
                return k;
            }
        }
    }

    std::mt19937_64 engine_;
};

// The per-process streams used by one simulation run.
struct SimStreams {
    RandomStream photons;
    RandomStream jumps;
    RandomStream collisions;
    RandomStream outcomes;
    RandomStream loss;
    RandomStream push;
    RandomStream occupancy;
    RandomStream heating;
    RandomStream measure;
    RandomStream noise;

    static SimStreams from_seed(std::uint64_t seed) {
        auto make = [seed](StreamTag tag) {
            return RandomStream(derive_seed(seed, static_cast<std::uint64_t>(tag)));
        };
        SimStreams s;
        s.photons = make(StreamTag::Photons);
        s.jumps = make(StreamTag::Jumps);
        s.collisions = make(StreamTag::Collisions);
        s.outcomes = make(StreamTag::Outcomes);
        s.loss = make(StreamTag::Loss);
        s.push = make(StreamTag::Push);
        s.occupancy = make(StreamTag::Occupancy);
        s.heating = make(StreamTag::Heating);
        s.measure = make(StreamTag::Measure);
        s.noise = make(StreamTag::Noise);
        return s;
    }
};

inline std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial_index) {
    return derive_seed(master, trial_index);
}

}  // namespace cavsim

#endif  // CAVSIM_RNG_HPP
