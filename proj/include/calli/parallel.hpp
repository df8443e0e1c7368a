#pragma once

#include <cstddef>
#include <functional>

namespace calli {

// Worker count for parallel_for. Defaults to the hardware concurrency,
// clamped to 8; override via set_num_threads or CALLI_THREADS.
void set_num_threads(int n);
int num_threads();

// Runs fn(task) for task in [0, n_tasks). Task boundaries are fixed by the
// caller, never by the worker count, so results are identical for any
// thread setting as long as tasks write disjoint outputs.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& fn);

// Convenience: splits [0, n) into fixed blocks of `grain` and calls
// fn(begin, end) per block.
void parallel_blocks(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace calli
