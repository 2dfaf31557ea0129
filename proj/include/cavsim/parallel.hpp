// Trial-level parallel fan-out.
//
// Monte Carlo batches here are embarrassingly parallel: every trial owns a
// seed derived from (master seed, trial index) and writes to its own result
// slot, so the serial and OpenMP paths produce bit-identical output. The
// serial path is the reference; tests compare the two and the bench tool
// measures the speedup.

#ifndef CAVSIM_PARALLEL_HPP
#define CAVSIM_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace cavsim {

enum class ExecMode { Serial, OpenMP };

// Number of worker threads the OpenMP path would use (1 when built
// without OpenMP).
int hardware_workers();

void parallel_for_impl(std::size_t n, const std::function<void(std::size_t)>& body,
                       ExecMode mode);

// Runs body(0..n-1). body must only write to per-index state.
template <typename Fn>
void for_each_index(std::size_t n, ExecMode mode, Fn&& body) {
    std::function<void(std::size_t)> f = std::forward<Fn>(body);
    parallel_for_impl(n, f, mode);
}

}  // namespace cavsim

#endif  // CAVSIM_PARALLEL_HPP
