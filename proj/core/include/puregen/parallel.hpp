#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <type_traits>
#include <vector>

namespace puregen {

// Number of distinct worker ids parallel_for will use.
inline std::size_t worker_slots(std::size_t n, int workers) {
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
}

inline int default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(i) for i in [0, n) over `workers` threads with static contiguous
// chunks. Results must be written to per-index slots, so the outcome does
// not depend on the worker count. The first exception (by chunk order) is
// rethrown after all workers join. `fn` may take (index) or (index, worker).
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  auto call = [&fn](std::size_t i, std::size_t worker) {
    if constexpr (std::is_invocable_v<Fn&, std::size_t, std::size_t>) {
      fn(i, worker);
    } else {
      fn(i);
    }
  };
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, n);
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) call(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) call(i, t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace puregen
