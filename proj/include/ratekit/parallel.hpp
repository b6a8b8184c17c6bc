#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ratekit {

// workers <= 0 selects the hardware thread count.
inline int resolve_workers(int requested) {
#ifdef _OPENMP
  return requested > 0 ? requested : omp_get_max_threads();
#else
  return requested > 0 ? requested : 1;
#endif
}

// Runs body(i) for i in [0, n).  workers <= 1 is the serial reference path.
// Bodies must only write to per-index state, which keeps results identical
// for any worker count.
template <class F>
void parallel_for(long n, int workers, F&& body) {
  if (workers <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(workers) schedule(static)
  for (long i = 0; i < n; ++i) body(i);
#else
  for (long i = 0; i < n; ++i) body(i);
#endif
}

// Neumaier compensated summation.
inline double neumaier_sum(const double* x, size_t n) {
  double s = 0.0, c = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double t = s + x[i];
    if (std::abs(s) >= std::abs(x[i]))
      c += (s - t) + x[i];
    else
      c += (x[i] - t) + s;
    s = t;
  }
  return s + c;
}

inline double neumaier_sum(const std::vector<double>& x) {
  return neumaier_sum(x.data(), x.size());
}

// Deterministic parallel sum of term(i): fixed-size chunks are summed
// serially, chunk partials are combined serially, so the result does not
// depend on the worker count.
template <class F>
double parallel_sum(long n, int workers, F&& term) {
  constexpr long kChunk = 4096;
  long nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(static_cast<size_t>(nchunks), 0.0);
  parallel_for(nchunks, workers, [&](long c) {
    double s = 0.0, comp = 0.0;
    long end = std::min(n, (c + 1) * kChunk);
    for (long i = c * kChunk; i < end; ++i) {
      double v = term(i);
      double t = s + v;
      if (std::abs(s) >= std::abs(v))
        comp += (s - t) + v;
      else
        comp += (v - t) + s;
      s = t;
    }
    partial[static_cast<size_t>(c)] = s + comp;
  });
  return neumaier_sum(partial);
}

}  // namespace ratekit
