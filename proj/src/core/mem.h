#pragma once

#include <atomic>
#include <cstddef>

namespace avfuse::mem {

// Process-wide tracking of tensor storage. Every tensor buffer reports its
// bytes on allocation and release; the benchmark reads the high-water mark
// to measure peak transient memory. Tracking is always on so benchmarked
// forwards run the exact same code path as normal forwards.

void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);

std::size_t current_bytes();
std::size_t peak_bytes();

// Resets the high-water mark to the current live-byte count.
void reset_peak();

}  // namespace avfuse::mem
