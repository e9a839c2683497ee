#pragma once

// Block-parallel execution for Monte Carlo work. Work is cut into fixed-size
// blocks, each block gets its own RNG seeded from (seed, block index), and
// results come back in block order, so outputs do not depend on the number of
// threads.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace esb {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive per-path seeds cheaply.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(mix_seed(a) ^ b) ^ c);
}

inline Rng block_rng(std::uint64_t seed, std::uint64_t block, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

// ESB_THREADS, else the hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("ESB_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct BlockRange {
  std::size_t index;
  std::size_t begin;
  std::size_t end;
  std::size_t size() const { return end - begin; }
};

// Calls fn(range) for every block of `block_size` items and returns the results
// in block order. Exceptions from workers are rethrown on the calling thread.
template <class Fn>
auto run_blocks(std::size_t items, std::size_t block_size, unsigned threads, Fn&& fn)
    -> std::vector<decltype(fn(BlockRange{}))> {
  using Result = decltype(fn(BlockRange{}));
  block_size = std::max<std::size_t>(block_size, 1);
  const std::size_t blocks = (items + block_size - 1) / block_size;
  std::vector<Result> results(blocks);
  auto range = [&](std::size_t b) {
    return BlockRange{b, b * block_size, std::min(items, (b + 1) * block_size)};
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));
  if (threads == 1) {
    for (std::size_t b = 0; b < blocks; ++b) results[b] = fn(range(b));
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t b = next.fetch_add(1);
        if (b >= blocks) return;
        try {
          results[b] = fn(range(b));
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = blocks;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

// Runs fn(i) for i in [0, n) across threads; for independent deterministic work.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  run_blocks(n, 1, threads, [&](BlockRange r) {
    fn(r.begin);
    return 0;
  });
}

}  // namespace esb
