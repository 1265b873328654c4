#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace voxelforge {

// Worker count: VOXELFORGE_THREADS if set and positive, otherwise the
// hardware concurrency (at least 1).
std::size_t thread_budget();

// Runs body(i) for i in [0, count). Work is split into contiguous blocks so
// results written by index are independent of the thread count. If any
// call throws, the exception raised for the lowest index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace voxelforge
