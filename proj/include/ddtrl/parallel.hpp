#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ddtrl {

// Runs fn(0..count-1), one thread per index when count > 1. The first
// exception (by index) is rethrown after all workers join.
template <class Fn>
void run_parallel(std::size_t count, Fn&& fn) {
  if (count <= 1) {
    if (count == 1) fn(std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> workers;
  workers.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    workers.emplace_back([&fn, &errors, c] {
      try {
        fn(c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ddtrl
