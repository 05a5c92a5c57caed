#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace sc {

// Static-partition parallel loop over [begin, end). Each index is processed by
// exactly one thread, so kernels that write disjoint output cells stay
// bit-deterministic regardless of thread count.
inline void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t, int64_t)>& body) {
  const int64_t n = end - begin;
  if (n <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int64_t threads = std::min<int64_t>(hw ? hw : 1, n);
  if (threads <= 1 || n < 2) {
    body(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  const int64_t chunk = (n + threads - 1) / threads;
  for (int64_t t = 0; t < threads; ++t) {
    const int64_t lo = begin + t * chunk;
    const int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sc
