#pragma once

#include <cstddef>
#include <functional>

namespace dpfl {

// Worker count: DPFL_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Calls fn(i) for every i in [begin, end), split into contiguous chunks over
// up to `workers` threads. The first exception thrown by any worker is
// rethrown after all workers join.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn, std::size_t workers);

}  // namespace dpfl
