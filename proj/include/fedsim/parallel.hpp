#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fedsim::detail {

// Runs fn(m) for m in [0, M), optionally across threads. Results must be
// written to per-machine slots by the caller; exceptions are rethrown for the
// lowest failing machine index so error reporting does not depend on
// scheduling.
template <class Fn>
void for_each_machine(int M, int n_threads, Fn&& fn) {
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(M));
  auto guarded = [&](int m) {
    try {
      fn(m);
    } catch (...) {
      errs[static_cast<std::size_t>(m)] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min(n_threads, M));
  if (workers == 1) {
    for (int m = 0; m < M; ++m) guarded(m);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (int m = t; m < M; m += workers) guarded(m);
      });
    for (auto& th : pool) th.join();
  }
  for (int m = 0; m < M; ++m)
    if (errs[static_cast<std::size_t>(m)]) std::rethrow_exception(errs[static_cast<std::size_t>(m)]);
}

// Work-stealing loop over n independent jobs. Job durations may vary, so
// dispatch is dynamic; callers must keep results in per-job slots to stay
// schedule-independent. The lowest-index exception wins, as above.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  std::vector<std::exception_ptr> errs(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
  const int workers = static_cast<int>(
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> counter{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = counter.fetch_add(1);
          if (i >= n) return;
          guarded(i);
        }
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i)
    if (errs[i]) std::rethrow_exception(errs[i]);
}

}  // namespace fedsim::detail
