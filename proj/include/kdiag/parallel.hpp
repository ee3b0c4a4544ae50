// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kdiag {

// Runs fn(i) for i in [0, count) on up to max_in_flight threads. Results must
// be written to index-addressed slots by the caller so completion order never
// shows. The first exception is rethrown after all workers join.
inline void parallel_for(size_t count, size_t max_in_flight,
                         const std::function<void(size_t)>& fn) {
  if (count == 0) return;
  size_t workers = max_in_flight == 0 ? 1 : max_in_flight;
  if (workers > count) workers = count;
  if (workers == 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace kdiag
