#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace scanrl {

// Worker count for data-parallel loops; 0 picks the hardware concurrency.
// Results never depend on the value: parallel loops only write disjoint
// per-index slots.
inline int& worker_threads() {
  static int n = 0;
  return n;
}

inline int effective_threads() {
  int n = worker_threads();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

template <class F>
void parallel_for(int n, F&& fn) {
  const int workers = std::min(effective_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  auto run = [&](int w) {
    const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    for (int i = lo; i < hi; ++i) fn(i);
  };
  for (int w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
}

}  // namespace scanrl
