#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace precdelta {

// Parallelism cap: min(hardware, PRECDELTA_THREADS). Set PRECDELTA_THREADS=1
// to force serial execution.
inline int max_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("PRECDELTA_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

// Static split of [0, n) across worker threads. fn(i, thread_id).
inline void parallel_for(long n, const std::function<void(long, int)>& fn) {
  const int nthreads = std::min<long>(max_threads(), n) > 0 ? static_cast<int>(std::min<long>(max_threads(), n)) : 1;
  if (nthreads <= 1) {
    for (long i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) {
    workers.emplace_back([=, &fn]() {
      for (long i = t; i < n; i += nthreads) fn(i, t);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace precdelta
