// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace effectfuse {

inline constexpr const char* kVersion = "0.1.0";

// Bad user input: malformed configuration, priors outside their domain.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad data: unusable design matrices, unobserved levels, malformed records.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Breakdown at run time: failed factorizations, degenerate posteriors.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic per-task seed derived from a master seed and an index path,
// e.g. derive_seed(seed, {rep, cell}). Order of path elements matters.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t token : path) h = mix64(h ^ token);
  return h;
}

// Worker count for embarrassingly parallel loops. EFFECTFUSE_THREADS wins;
// 0 or unset falls back to the hardware count.
inline unsigned thread_count() {
  if (const char* env = std::getenv("EFFECTFUSE_THREADS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Runs body(i) for i in [0, count) on up to `threads` workers. Results must
// not depend on scheduling; callers write to disjoint slots. The first
// exception thrown by any worker is rethrown after all of them finish.
template <typename F>
void parallel_for(int count, unsigned threads, F&& body) {
  if (count <= 0) return;
  if (threads <= 1 || count == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned worker_count = std::min<unsigned>(threads, static_cast<unsigned>(count));
  pool.reserve(worker_count);
  for (unsigned t = 0; t < worker_count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace effectfuse
