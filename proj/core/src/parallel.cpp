#include "frad/parallel.hpp"

#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace frad {

namespace {
unsigned g_threads = 1;
}

unsigned thread_count() { return g_threads; }

void set_thread_count(unsigned n) {
  if (n == 0) throw std::invalid_argument("thread count must be at least 1");
  g_threads = n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = g_threads;
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto run_range = [&](std::size_t begin, std::size_t end) {
    try {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  const std::size_t t = std::min<std::size_t>(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(t - 1);
  for (std::size_t w = 1; w < t; ++w) {
    pool.emplace_back(run_range, n * w / t, n * (w + 1) / t);
  }
  run_range(0, n / t);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace frad
