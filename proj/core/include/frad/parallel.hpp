#ifndef FRAD_PARALLEL_HPP
#define FRAD_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace frad {

// Global worker count used by parallel_for. Defaults to 1; the CLI's
// --threads flag sets it. Not thread-safe to change mid-flight.
unsigned thread_count();
void set_thread_count(unsigned n);

// Runs fn(i) for i in [0, n) across the configured workers using a static
// contiguous partition. Each index must touch only its own slots; under
// that contract results are identical for any worker count, which is what
// keeps experiment outputs independent of --threads. Exceptions from
// workers are rethrown (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace frad

#endif
