#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace rpm {

// Runs fn(i) for every i in [0, n) on up to `workers` threads. Failures are
// captured per index instead of aborting the batch; the caller decides what
// an error in one item means for the whole.
template <typename Fn>
std::vector<std::exception_ptr> parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (n == 0) return errors;
  const std::size_t threads = std::clamp<std::size_t>(workers > 0 ? workers : 1, 1, n);

  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  if (threads == 1) {
    run();
    return errors;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run);
  pool.clear();
  return errors;
}

// Rethrows the first captured error, if any.
inline void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rpm
