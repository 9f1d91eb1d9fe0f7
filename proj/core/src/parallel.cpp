// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace scanstereo {
namespace {

std::atomic<std::size_t> g_threads{0};
// Set inside worker bodies so that nested parallel_for calls run inline.
thread_local bool t_in_parallel = false;

struct RegionGuard {
  RegionGuard() : previous(t_in_parallel) { t_in_parallel = true; }
  ~RegionGuard() { t_in_parallel = previous; }
  bool previous;
};

}  // namespace

void set_num_threads(std::size_t n) { g_threads.store(n); }

std::size_t num_threads() {
  std::size_t n = g_threads.load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk) {
  if (count == 0) return;
  min_chunk = std::max<std::size_t>(min_chunk, 1);
  const std::size_t workers =
      std::min(num_threads(), (count + min_chunk - 1) / min_chunk);
  if (workers <= 1 || t_in_parallel) {
    body(0, count);
    return;
  }

  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const std::size_t step = (count + workers - 1) / workers;
    auto run = [&](std::size_t b, std::size_t e) {
      try {
        RegionGuard guard;
        body(b, e);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    };
    for (std::size_t w = 1; w < workers; ++w) {
      const std::size_t b = w * step;
      const std::size_t e = std::min(count, b + step);
      if (b < e) pool.emplace_back(run, b, e);
    }
    run(0, std::min(count, step));
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace scanstereo
