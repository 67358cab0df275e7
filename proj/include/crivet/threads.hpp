#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crivet {

// Worker cap: CRIVET_THREADS wins, otherwise the machine default. Every
// parallel region in the codebase routes through this so results stay
// reproducible under an explicit cap.
inline int effective_threads() {
  if (const char* env = std::getenv("CRIVET_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace crivet
