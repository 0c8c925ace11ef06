#pragma once

#include <cstdint>
#include <functional>

namespace ldrc {

// Kernel-internal data parallelism. Work items are split into contiguous
// chunks, one per worker, so every output element is produced by exactly one
// thread in a fixed serial order: results are bit-identical for any thread
// count, including 1.
void set_num_threads(int n);  // n <= 0 restores the hardware default
int num_threads();

// fn(begin, end, worker_index); worker_index < num_threads().
void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t, int)>& fn);

}  // namespace ldrc
