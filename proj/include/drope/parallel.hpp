#ifndef DROPE__PARALLEL_HPP_
#define DROPE__PARALLEL_HPP_

#include <cstddef>
#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace drope
{

// Worker cap for the attention engines. Read once from DROPE_ATTN_THREADS;
// defaults to the hardware concurrency. set_worker_cap overrides it (0 restores
// the environment value).
std::size_t worker_cap();
void set_worker_cap(std::size_t cap);

/// Runs fn(i) for i in [0, n). Work items are split into contiguous blocks,
/// one per worker, so each index is always handled by exactly one thread and
/// results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn && fn)
{
  const std::size_t workers = std::min(worker_cap(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        try {
          for (std::size_t i = begin; i < end; ++i) {
            fn(i);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto & e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace drope

#endif  // DROPE__PARALLEL_HPP_
