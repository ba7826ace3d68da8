#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace ssaid {

/// Runs body(i) for i in [0, n) on up to `threads` threads. Work is split
/// into contiguous chunks; results must be written to per-index slots so the
/// outcome does not depend on the thread count. The exception of the lowest
/// failing chunk is rethrown.
template <class Body>
void parallel_for(std::int64_t n, int threads, Body&& body) {
  const std::int64_t workers =
      std::clamp<std::int64_t>(threads, 1, std::max<std::int64_t>(n, 1));
  if (workers == 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::int64_t begin = n * w / workers;
      const std::int64_t end = n * (w + 1) / workers;
      try {
        for (std::int64_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ssaid
