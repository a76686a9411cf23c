#pragma once

#include <cstddef>
#include <functional>

namespace msd {

/// Worker count: MSDIFF_THREADS when set to a positive integer, else the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(0..n-1) on up to worker_count() threads. Tasks must write only to
/// their own slots. The exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace msd
