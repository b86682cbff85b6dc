#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

namespace icdmp {

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// Runs fn(worker_id, begin, end) over static contiguous chunks of [0, n).
// Results must be written to per-index (or per-worker) slots; callers reduce
// them in a fixed order afterwards, so output never depends on scheduling.
template <typename Fn>
void parallel_chunks(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  const int w = static_cast<int>(std::min<std::size_t>(resolve_workers(workers), n));
  if (w <= 1) {
    fn(0, std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + w - 1) / w;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
  pool.reserve(static_cast<std::size_t>(w));
  for (int i = 0; i < w; ++i) {
    const std::size_t b = static_cast<std::size_t>(i) * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, &errors, i, b, e] {
      try {
        fn(i, b, e);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace icdmp
