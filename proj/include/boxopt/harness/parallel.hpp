#pragma once

/// @file parallel.hpp
/// Bounded worker pool for independent per-item work.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <string_view>
#include <thread>
#include <vector>

namespace boxopt::harness {

/// BOXOPT_THREADS if set to a positive integer, else the core count.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("BOXOPT_THREADS")) {
    const std::string_view s(env);
    std::size_t n = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
    if (r.ec == std::errc() && r.ptr == s.data() + s.size() && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, n). Items are claimed in index order; results
/// must be written to per-index slots. If any item throws, the exception of
/// the lowest failing index is rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t n, F&& f, std::size_t threads = worker_count()) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i; !failed && (i = next++) < n;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace boxopt::harness
