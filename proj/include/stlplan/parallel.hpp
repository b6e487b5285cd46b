#ifndef STLPLAN_PARALLEL_HPP
#define STLPLAN_PARALLEL_HPP

#include <functional>
#include <thread>
#include <vector>

namespace stlplan {

// Deterministic parallel-for: item i always produces the same result into
// slot i regardless of worker count, because every item derives its own RNG
// stream and reductions happen in index order after the join.
inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace stlplan

#endif
