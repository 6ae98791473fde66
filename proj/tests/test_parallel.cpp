#include <atomic>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "frad/parallel.hpp"

using namespace frad;

namespace {

// Restores the global worker count on scope exit so test order can't leak.
struct ThreadGuard {
  int saved = thread_count();
  ~ThreadGuard() { set_thread_count(saved); }
};

}  // namespace

TEST_CASE("every index is visited exactly once at any worker count") {
  ThreadGuard guard;
  for (int workers : {1, 2, 3, 8}) {
    set_thread_count(workers);
    std::vector<std::atomic<int>> hits(101);
    parallel_for(101, [&](std::size_t i) { hits[i].fetch_add(1); });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

TEST_CASE("per-index results do not depend on the worker count") {
  ThreadGuard guard;
  auto run = [](int workers) {
    set_thread_count(workers);
    std::vector<double> out(1000);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<double>(i) * 1.5 + 1.0; });
    return out;
  };
  const auto serial = run(1);
  CHECK(run(4) == serial);
  CHECK(run(7) == serial);
}

TEST_CASE("zero and single-element ranges") {
  ThreadGuard guard;
  set_thread_count(4);
  int calls = 0;
  parallel_for(0, [&](std::size_t) { ++calls; });
  CHECK(calls == 0);
  parallel_for(1, [&](std::size_t i) { calls += static_cast<int>(i) + 1; });
  CHECK(calls == 1);
}

TEST_CASE("a worker exception reaches the caller") {
  ThreadGuard guard;
  set_thread_count(4);
  CHECK_THROWS_AS(parallel_for(64,
                               [&](std::size_t i) {
                                 if (i == 13) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("worker count is validated and readable") {
  ThreadGuard guard;
  CHECK_THROWS_AS(set_thread_count(0), std::invalid_argument);
  set_thread_count(3);
  CHECK(thread_count() == 3);
}
