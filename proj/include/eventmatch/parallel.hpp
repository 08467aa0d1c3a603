#pragma once

#include <cstddef>
#include <functional>

namespace eventmatch {

// Process-wide kernel parallelism. Deterministic mode forces one thread and
// therefore a fixed reduction order everywhere.
void set_thread_count(unsigned n);
unsigned thread_count();
void set_deterministic(bool on);
bool deterministic();

// Calls fn(i) for i in [begin, end), split into contiguous chunks.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace eventmatch
