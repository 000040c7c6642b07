#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace classo {

inline void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

// Runs body(i) for i in [0, n). Each index must touch only its own slot so the
// result does not depend on scheduling. The exception from the lowest failing
// index is rethrown after the loop.
template <class Body>
void parallel_for(std::ptrdiff_t n, Body&& body) {
  std::exception_ptr first_error;
  std::ptrdiff_t first_index = n;
  std::mutex guard;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8) if (n > 16)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard lock(guard);
      if (i < first_index) {
        first_index = i;
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace classo
