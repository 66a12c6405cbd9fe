#pragma once

#include <cstddef>
#include <functional>

namespace fodkit {

/// Worker count: FODKIT_THREADS when set (>= 1), else hardware concurrency.
int worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads using static
/// contiguous chunks. fn must only write to slots owned by index i, so the
/// result is identical to a serial loop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = 0);

}  // namespace fodkit
