#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace csmap {

/// Worker count: CSMAP_THREADS caps it, hardware concurrency is the default.
inline int thread_budget() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("CSMAP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1 && v < static_cast<long>(n)) n = static_cast<unsigned>(v);
  }
  return static_cast<int>(n);
}

/// Static block partition; fn(i) must only touch index-i state.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const int workers = std::min<std::size_t>(thread_budget(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace csmap
