#pragma once

#include <cstddef>
#include <functional>

namespace svcca {

/// Worker count: SVCCA_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Callers
/// write results into pre-sized slots indexed by i, so assembly order is
/// independent of scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace svcca
