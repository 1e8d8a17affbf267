#ifndef ROIM_PARALLEL_HPP
#define ROIM_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace roim {

// Deterministic block-parallel driver. The work range is cut into fixed-size
// blocks whose boundaries do not depend on the thread count; workers pull
// block indices from a shared counter. Callers keep one accumulator per
// block and reduce them sequentially afterwards, which makes every result
// independent of how many threads ran.
struct BlockRange {
  std::size_t index;
  std::size_t begin;
  std::size_t end;
};

inline std::size_t block_count(std::size_t total, std::size_t block_size) {
  return (total + block_size - 1) / block_size;
}

inline void for_each_block(std::size_t total, std::size_t block_size,
                           unsigned threads,
                           const std::function<void(const BlockRange&)>& fn) {
  if (total == 0) return;
  const std::size_t nblocks = block_count(total, block_size);
  if (threads <= 1 || nblocks <= 1) {
    for (std::size_t b = 0; b < nblocks; ++b) {
      fn({b, b * block_size, std::min(total, (b + 1) * block_size)});
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= nblocks) return;
      fn({b, b * block_size, std::min(total, (b + 1) * block_size)});
    }
  };
  std::vector<std::thread> pool;
  unsigned n = std::min<unsigned>(threads, static_cast<unsigned>(nblocks));
  pool.reserve(n);
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace roim

#endif
