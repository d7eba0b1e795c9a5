#pragma once

#include <cstddef>
#include <functional>

namespace freebound {

// Worker count used by every parallel loop. Defaults to FREEBOUND_THREADS when
// set, else 1.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [0, n) over contiguous blocks. Each index is handled by
// exactly one worker, so results written to per-index slots are independent
// of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace freebound
