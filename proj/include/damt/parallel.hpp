#pragma once

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace damt {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written into pre-sized slots by index so completion order cannot affect
// the outcome. The first exception (by slot index) is rethrown after join.
template <typename Fn>
void parallel_for(size_t n, size_t workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace damt
