#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "cavsim/parallel.hpp"
#include "cavsim/rng.hpp"

using namespace cavsim;

TEST_CASE("streams are reproducible and decorrelated") {
    auto a = SimStreams::from_seed(123);
    auto b = SimStreams::from_seed(123);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.photons.uniform() == b.photons.uniform());
        CHECK(a.collisions.uniform() == b.collisions.uniform());
    }
    // Different master seeds give different sequences.
    auto c = SimStreams::from_seed(124);
    int same = 0;
    auto d = SimStreams::from_seed(123);
    for (int i = 0; i < 64; ++i) {
        if (c.photons.uniform() == d.photons.uniform()) ++same;
    }
    CHECK(same < 4);
}

TEST_CASE("consuming one stream leaves the others untouched") {
    auto a = SimStreams::from_seed(5);
    auto b = SimStreams::from_seed(5);
    for (int i = 0; i < 1000; ++i) a.collisions.uniform();  // burn one process
    for (int i = 0; i < 32; ++i) {
        CHECK(a.photons.uniform() == b.photons.uniform());
        CHECK(a.loss.uniform() == b.loss.uniform());
        CHECK(a.jumps.uniform() == b.jumps.uniform());
    }
}

TEST_CASE("exponential sampler has the right mean") {
    RandomStream s(99);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) sum += s.exponential(3.5);
    CHECK(sum / n == doctest::Approx(3.5).epsilon(0.02));
}

TEST_CASE("poisson sampler means and variances") {
    for (double mean : {0.5, 4.0, 25.0, 778.0}) {
        RandomStream s(7);
        const int n = 100000;
        double sum = 0.0;
        double sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<double>(s.poisson(mean));
            sum += k;
            sum2 += k * k;
        }
        const double m = sum / n;
        const double v = sum2 / n - m * m;
        CHECK(m == doctest::Approx(mean).epsilon(0.02));
        CHECK(v == doctest::Approx(mean).epsilon(0.05));
    }
}

TEST_CASE("poisson chi-squared goodness of fit at large mean") {
    // The photon model relies on exact Poisson statistics at ~1000
    // expected counts; a normal approximation would fail this.
    const double mean = 778.0;
    RandomStream s(20240517);
    const int n = 100000;
    std::vector<std::int64_t> samples(n);
    for (auto& v : samples) v = s.poisson(mean);

    // Bin integer outcomes, grouping tails so expected counts >= 10.
    const auto lo = static_cast<std::int64_t>(mean - 5.0 * std::sqrt(mean));
    const auto hi = static_cast<std::int64_t>(mean + 5.0 * std::sqrt(mean));
    std::vector<double> expected;
    std::vector<std::int64_t> observed;
    // log-pmf for stability.
    auto log_pmf = [&](std::int64_t k) {
        return static_cast<double>(k) * std::log(mean) - mean -
               std::lgamma(static_cast<double>(k) + 1.0);
    };
    std::vector<std::int64_t> counts(static_cast<std::size_t>(hi - lo + 1), 0);
    std::int64_t below = 0;
    std::int64_t above = 0;
    for (auto v : samples) {
        if (v < lo) {
            ++below;
        } else if (v > hi) {
            ++above;
        } else {
            ++counts[static_cast<std::size_t>(v - lo)];
        }
    }
    double p_below = 0.0;
    for (std::int64_t k = lo - 200; k < lo; ++k) p_below += std::exp(log_pmf(k));
    double p_above = 0.0;
    for (std::int64_t k = hi + 1; k <= hi + 200; ++k) p_above += std::exp(log_pmf(k));
    expected.push_back(p_below * n);
    observed.push_back(below);
    for (std::int64_t k = lo; k <= hi; ++k) {
        expected.push_back(std::exp(log_pmf(k)) * n);
        observed.push_back(counts[static_cast<std::size_t>(k - lo)]);
    }
    expected.push_back(p_above * n);
    observed.push_back(above);

    // Merge cells with small expectation into their neighbor.
    std::vector<double> e_merged;
    std::vector<double> o_merged;
    double e_acc = 0.0;
    double o_acc = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        e_acc += expected[i];
        o_acc += static_cast<double>(observed[i]);
        if (e_acc >= 10.0) {
            e_merged.push_back(e_acc);
            o_merged.push_back(o_acc);
            e_acc = o_acc = 0.0;
        }
    }
    if (e_acc > 0.0 && !e_merged.empty()) {
        e_merged.back() += e_acc;
        o_merged.back() += o_acc;
    }

    double chi2 = 0.0;
    for (std::size_t i = 0; i < e_merged.size(); ++i) {
        const double d = o_merged[i] - e_merged[i];
        chi2 += d * d / e_merged[i];
    }
    const auto dof = static_cast<double>(e_merged.size() - 1);
    // 1% critical value for large dof: chi2 < dof + 2.33 * sqrt(2 dof).
    CHECK(chi2 < dof + 2.33 * std::sqrt(2.0 * dof));
}

TEST_CASE("serial and OpenMP fan-out produce identical slots") {
    const std::size_t n = 500;
    std::vector<double> serial(n);
    std::vector<double> parallel(n);
    auto body = [](std::size_t i, std::vector<double>& out) {
        RandomStream s(trial_seed(77, i));
        double acc = 0.0;
        for (int k = 0; k < 100; ++k) acc += s.exponential(1.0);
        out[i] = acc;
    };
    for_each_index(n, ExecMode::Serial, [&](std::size_t i) { body(i, serial); });
    for_each_index(n, ExecMode::OpenMP, [&](std::size_t i) { body(i, parallel); });
    CHECK(serial == parallel);
}

TEST_CASE("OpenMP path actually runs every index once") {
    const std::size_t n = 10000;
    std::vector<std::atomic<int>> hits(n);
    for_each_index(n, ExecMode::OpenMP, [&](std::size_t i) { hits[i]++; });
    const bool all_once =
        std::all_of(hits.begin(), hits.end(), [](const auto& h) { return h == 1; });
    CHECK(all_once);
}
