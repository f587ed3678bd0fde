#include "pfseg/common.hpp"

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pfseg {

int worker_threads() {
  static const int n = [] {
    int v = 0;
    if (const char* s = std::getenv("PFSEG_THREADS")) v = std::atoi(s);
#ifdef _OPENMP
    if (v < 1) v = omp_get_max_threads();
#else
    if (v < 1) v = 1;
#endif
    return v;
  }();
  return n;
}

}  // namespace pfseg
