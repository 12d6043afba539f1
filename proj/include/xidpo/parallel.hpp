#pragma once

#include <cstddef>
#include <functional>

namespace xidpo {

// Worker count from XI_DPO_THREADS (0 or unset = hardware concurrency).
std::size_t default_workers();

// Calls fn(i) for every i in [0, n). Work is split into contiguous chunks;
// callers write results into per-index slots and reduce afterwards in index
// order, so the outcome does not depend on the worker count.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace xidpo
