#pragma once

#include <cstddef>
#include <functional>

namespace pb {

// Global worker count for the embarrassingly-parallel stages (attack batches,
// per-image feature extraction, query scoring). Defaults to the hardware
// concurrency; PB_THREADS overrides. A value of 1 runs everything inline.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so each
// index is processed exactly once and writes to disjoint outputs stay
// deterministic regardless of the worker count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

// Chunked variant: fn(begin, end) over disjoint ranges.
void parallel_for_chunks(size_t n, size_t chunk,
                         const std::function<void(size_t, size_t)>& fn);

}  // namespace pb
