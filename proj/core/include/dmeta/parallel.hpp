#pragma once

#include <cstdint>
#include <functional>

namespace dmeta {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots by the caller; the iteration order is
/// unspecified but the index->work mapping is fixed, so any per-index
/// output is deterministic. Exceptions are captured and rethrown (first
/// thrown by index order).
void parallel_for(std::int64_t n, int workers,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace dmeta
