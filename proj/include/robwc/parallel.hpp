#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace robwc {

// Process-wide cap on worker threads (CLI --threads). 0 = hardware default.
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};
  return cap;
}

inline void set_thread_cap(int n) { thread_cap().store(n); }

inline int effective_threads(std::size_t n_items) {
  int cap = thread_cap().load();
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int n = (cap > 0) ? std::min(cap, hw) : hw;
  return static_cast<int>(std::min<std::size_t>(n, n_items));
}

// Runs body(i) for i in [0, n). Results must be written to per-index slots;
// scheduling order is unspecified but the output layout is position-fixed,
// which keeps downstream reductions deterministic.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  if (n == 0) return;
  int workers = effective_threads(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace robwc
