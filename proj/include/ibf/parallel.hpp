#pragma once

#include <cstddef>
#include <functional>

namespace ibf {

/// Worker count: IBF_THREADS if set and positive, else the hardware
/// concurrency (at least 1).
int worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Work is
/// handed out by index, so results written to slot i do not depend on the
/// number of workers. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace ibf
