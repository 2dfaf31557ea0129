#include "cavsim/parallel.hpp"

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cavsim {

int hardware_workers() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void parallel_for_impl(std::size_t n, const std::function<void(std::size_t)>& body,
                       ExecMode mode) {
    if (mode == ExecMode::Serial) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
#ifdef _OPENMP
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < count; ++i) {
        body(static_cast<std::size_t>(i));
    }
#else
    for (std::size_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace cavsim
