#include "perturbench/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pb {

namespace {

int resolve_default() {
  if (const char* env = std::getenv("PB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::atomic<int> g_threads{0};  // 0 = not yet resolved

}  // namespace

int thread_count() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = resolve_default();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_thread_count(int n) {
  g_threads.store(std::max(1, n), std::memory_order_relaxed);
}

void parallel_for_chunks(size_t n, size_t chunk,
                         const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  const int workers = std::min<size_t>(thread_count(), (n + chunk - 1) / chunk);
  if (workers <= 1) {
    for (size_t b = 0; b < n; b += chunk) fn(b, std::min(n, b + chunk));
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      const size_t b = next.fetch_add(chunk, std::memory_order_relaxed);
      if (b >= n) return;
      try {
        fn(b, std::min(n, b + chunk));
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  for (int i = 1; i < workers; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  // Chunked under the hood to keep the atomic counter off the hot path.
  const size_t chunk = std::max<size_t>(1, n / (static_cast<size_t>(thread_count()) * 8));
  parallel_for_chunks(n, chunk, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace pb
