#include "dmeta/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace dmeta {

void parallel_for(std::int64_t n, int workers,
                  const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  const int nthreads = static_cast<int>(std::min<std::int64_t>(workers, n));
  if (nthreads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::int64_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  auto body = [&] {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dmeta
