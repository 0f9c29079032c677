#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace depthcal {

/// Worker thread count: hardware concurrency capped by DEPTHCAL_THREADS when set.
int workerThreads();

/// Runs fn(i) for i in [begin, end) split into contiguous chunks over `threads` workers.
/// Results must not depend on the split; callers write to disjoint slots.
template <typename Fn>
void parallelFor(int begin, int end, int threads, Fn&& fn) {
  const int count = end - begin;
  if (count <= 0) {
    return;
  }
  threads = std::clamp(threads, 1, count);
  if (threads == 1) {
    for (int i = begin; i < end; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  const int chunk = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int lo = begin + t * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) {
      break;
    }
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) {
        fn(i);
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
}

}  // namespace depthcal
