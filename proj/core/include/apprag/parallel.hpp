#pragma once

#include <cstddef>
#include <functional>

namespace apprag {

/// Runs fn(0..count-1) with up to `width` worker threads. Order of execution
/// is unspecified; the first exception wins and is rethrown after all workers
/// drain. width <= 1 runs inline.
void parallel_for(std::size_t count, int width, const std::function<void(std::size_t)>& fn);

}  // namespace apprag
