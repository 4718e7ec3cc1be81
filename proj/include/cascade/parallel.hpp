#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace cascade {

/// Selects the OpenMP kernel or its serial reference loop.
struct ExecOptions {
    bool parallel = true;
    int jobs = 0;  ///< worker cap; 0 leaves the OpenMP default
};

/// Runs `fn(i)` for i in [0, n). Exceptions are captured per index and never
/// escape the parallel region; slot i is null when fn(i) succeeded.
template <class Fn>
std::vector<std::exception_ptr> for_each_index(std::size_t n, const ExecOptions& opts, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    const auto count = static_cast<long long>(n);
    if (!opts.parallel) {
        for (long long i = 0; i < count; ++i) {
            try {
                fn(static_cast<std::size_t>(i));
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
        return errors;
    }
#if defined(_OPENMP)
    const int threads = opts.jobs > 0 ? opts.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads)
#endif
    for (long long i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    return errors;
}

/// Rethrows the lowest-index captured exception, if any.
inline void rethrow_first(const std::vector<std::exception_ptr>& errors) {
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace cascade
