#include "cmet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cmet {

namespace {
std::atomic<std::size_t> g_override{0};
// Nested loops run inline on the worker that reached them.
thread_local bool t_in_worker = false;
}

std::size_t default_workers() {
  if (const std::size_t o = g_override.load(); o > 0) return o;
  if (const char* env = std::getenv("MET_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  parallel_for_range(n, 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) body(i);
  });
}

void parallel_for_range(std::size_t n, std::size_t grain,
                        const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t chunks = (n + grain - 1) / grain;
  const std::size_t workers = std::min(default_workers(), chunks);
  if (workers <= 1 || t_in_worker) {
    body(0, n);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    t_in_worker = true;
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) {
        t_in_worker = false;
        return;
      }
      try {
        body(c * grain, std::min(n, (c + 1) * grain));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

WorkerLimit::WorkerLimit(std::size_t workers) : previous_(g_override.exchange(workers)) {}
WorkerLimit::~WorkerLimit() { g_override.store(previous_); }

}  // namespace cmet
