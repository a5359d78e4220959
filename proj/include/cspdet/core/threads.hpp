#pragma once

// Worker pool for data-parallel loops over disjoint output ranges.
// Thread count is capped by the CSPDET_THREADS environment variable.
// Partitioning is fixed by (n, num_threads), so results are identical
// whether a loop runs serially or threaded.

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cspdet {

inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("CSPDET_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return cached;
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
  if (threads <= 1 || n < 4096) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::int64_t b = t * chunk;
    const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace cspdet
