#include "drope/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace drope
{
namespace
{

std::size_t env_cap()
{
  static const std::size_t cap = [] {
    if (const char * raw = std::getenv("DROPE_ATTN_THREADS")) {
      try {
        const long value = std::stol(raw);
        if (value > 0) {
          return static_cast<std::size_t>(value);
        }
      } catch (const std::exception &) {
      }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(hw == 0 ? 1 : hw);
  }();
  return cap;
}

std::atomic<std::size_t> g_override{0};

}  // namespace

std::size_t worker_cap()
{
  const std::size_t o = g_override.load(std::memory_order_relaxed);
  return o != 0 ? o : env_cap();
}

void set_worker_cap(std::size_t cap) { g_override.store(cap, std::memory_order_relaxed); }

}  // namespace drope
