#include "core/mem.h"

namespace avfuse::mem {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

void on_alloc(std::size_t bytes) {
  std::size_t now = g_current.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void on_free(std::size_t bytes) { g_current.fetch_sub(bytes); }

std::size_t current_bytes() { return g_current.load(); }

std::size_t peak_bytes() { return g_peak.load(); }

void reset_peak() { g_peak.store(g_current.load()); }

}  // namespace avfuse::mem
