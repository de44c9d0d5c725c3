// Minimal worker pool.  parallel_for splits [0, n) into one contiguous chunk
// per requested thread; every index is written by exactly one thread and each
// output cell is computed by a sequential loop, so results are bit-identical
// for any thread count.  Nested calls run inline on the worker.
#pragma once

#include <cstdint>
#include <functional>

namespace rose {

// ROSE_THREADS environment variable if set, hardware concurrency otherwise.
int default_threads();

void parallel_for(int64_t n, int threads,
                  const std::function<void(int64_t, int64_t)>& body);

}  // namespace rose
